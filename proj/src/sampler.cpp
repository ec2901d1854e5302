#include "forested/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "forested/profiler.hpp"
#include "forested/rng.hpp"
#include "forested/values.hpp"

namespace forested {

namespace {
constexpr const char* kOtherCategory = "<other>";
constexpr std::size_t kVarianceChunk = 1024;
}  // namespace

FeatureMatrix encode_features(const Table& t) {
  const std::size_t n = t.n_rows();
  if (n < 2) throw InsufficientDataError("featurize needs at least 2 rows, got " + std::to_string(n));

  FeatureMatrix fm;
  std::vector<std::vector<double>> cols;
  for (std::size_t j = 0; j < t.n_cols(); ++j) {
    const auto column = t.column(j);
    if (infer_data_type(column) == DataType::numeric) {
      std::vector<double> parsed;
      for (const auto& v : column) {
        if (auto x = parse_decimal(v)) parsed.push_back(*x);
      }
      if (parsed.empty()) continue;
      std::sort(parsed.begin(), parsed.end());
      const double mean = std::accumulate(parsed.begin(), parsed.end(), 0.0) /
                          static_cast<double>(parsed.size());
      double ss = 0.0;
      for (double x : parsed) ss += (x - mean) * (x - mean);
      const double sd = std::sqrt(ss / static_cast<double>(parsed.size()));
      if (!(sd > 0.0)) continue;
      std::vector<double> z(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (auto x = parse_decimal(column[i])) z[i] = (*x - mean) / sd;
      }
      // Imputed zeros and the parsed values must average to zero over all rows.
      const double shift = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
      for (auto& v : z) v -= shift;
      fm.columns.push_back({j, "", true, mean, sd});
      cols.push_back(std::move(z));
      continue;
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& v : column) ++counts[v];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    const std::size_t kept = std::min(ranked.size(), kTopCategories);
    std::map<std::string, std::size_t> slot;
    for (std::size_t k = 0; k < kept; ++k) slot[ranked[k].first] = k;
    const std::size_t width = kept + (ranked.size() > kTopCategories ? 1 : 0);
    std::vector<std::vector<double>> indicators(width, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto it = slot.find(column[i]);
      indicators[it == slot.end() ? kept : it->second][i] = 1.0;
    }
    for (std::size_t k = 0; k < width; ++k) {
      const double ones = std::accumulate(indicators[k].begin(), indicators[k].end(), 0.0);
      if (ones == 0.0 || ones == static_cast<double>(n)) continue;
      fm.columns.push_back({j, k < kept ? ranked[k].first : kOtherCategory, false, 0.0, 1.0});
      cols.push_back(std::move(indicators[k]));
    }
  }

  fm.encoded.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (std::size_t i = 0; i < n; ++i) fm.encoded(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = cols[c][i];
  }
  return fm;
}

FeatureMatrix featurize(const Table& t, std::size_t pca_dim) {
  FeatureMatrix fm = encode_features(t);
  const Eigen::Index n = fm.encoded.rows();
  const Eigen::Index p = fm.encoded.cols();
  fm.center = fm.encoded.colwise().mean();
  if (p == 0) {
    fm.X = Eigen::MatrixXd::Zero(n, 0);
    fm.components = Eigen::MatrixXd::Zero(0, 0);
    fm.eigenvalues = Eigen::VectorXd::Zero(0);
    return fm;
  }
  const Eigen::MatrixXd centered = fm.encoded.rowwise() - fm.center;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("PCA eigendecomposition failed");
  // Eigen returns ascending order.
  fm.eigenvalues = solver.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
  const double top = std::max(fm.eigenvalues(0), 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index k = 0; k < fm.eigenvalues.size(); ++k) {
    if (fm.eigenvalues(k) > 1e-10 * top && fm.eigenvalues(k) > 1e-12) ++rank;
  }
  const Eigen::Index d = std::min<Eigen::Index>(static_cast<Eigen::Index>(pca_dim), rank);
  fm.components = vectors.leftCols(d);
  // Fix each component's sign so the largest-magnitude loading is positive.
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::Index arg = 0;
    fm.components.col(k).cwiseAbs().maxCoeff(&arg);
    if (fm.components(arg, k) < 0) fm.components.col(k) *= -1.0;
  }
  fm.X = centered * fm.components;
  return fm;
}

Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double chi) {
  if (!(chi > 0.0) || !std::isfinite(chi)) {
    throw ParameterError("kernel length-scale chi must be positive, got " + std::to_string(chi));
  }
  const double denom = 2.0 * chi * chi;
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index a = 0; a < A.rows(); ++a) {
    for (Eigen::Index b = 0; b < B.rows(); ++b) {
      K(a, b) = std::exp(-(A.row(a) - B.row(b)).squaredNorm() / denom);
    }
  }
  return K;
}

Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& X, double chi) {
  Eigen::MatrixXd K = rbf_kernel(X, X, chi);
  // Exact symmetry; the loop above already gives exp(0) = 1 on the diagonal.
  for (Eigen::Index a = 0; a < K.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < K.cols(); ++b) K(b, a) = K(a, b);
  }
  return K;
}

double median_pairwise_distance(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
  std::vector<double> dists;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      dists.push_back((X.row(static_cast<Eigen::Index>(rows[a])) - X.row(static_cast<Eigen::Index>(rows[b]))).norm());
    }
  }
  if (dists.empty()) return 1.0;
  std::sort(dists.begin(), dists.end());
  const std::size_t mid = dists.size() / 2;
  const double med = dists.size() % 2 ? dists[mid] : 0.5 * (dists[mid - 1] + dists[mid]);
  return med > 0.0 ? med : 1.0;
}

Eigen::VectorXd gp_predictive_variance(const Eigen::MatrixXd& X,
                                       const std::vector<std::size_t>& fit_rows, double chi,
                                       double* jitter_used) {
  if (!(chi > 0.0)) throw ParameterError("kernel length-scale chi must be positive");
  Eigen::MatrixXd F(static_cast<Eigen::Index>(fit_rows.size()), X.cols());
  for (std::size_t r = 0; r < fit_rows.size(); ++r) F.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(fit_rows[r]));
  const Eigen::MatrixXd K = rbf_kernel(F, chi);

  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 1e-8;
  bool ok = false;
  for (; jitter <= 1e-2 * 1.0000001; jitter *= 10.0) {
    Eigen::MatrixXd Kj = K;
    Kj.diagonal().array() += jitter;
    llt.compute(Kj);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
      ok = true;
      break;
    }
  }
  if (!ok) {
    throw NumericalError("GP kernel matrix not positive definite even with jitter 1e-2 (chi=" +
                         std::to_string(chi) + ")");
  }
  if (jitter_used) *jitter_used = jitter;

  Eigen::VectorXd var(X.rows());
  for (Eigen::Index start = 0; start < X.rows(); start += kVarianceChunk) {
    const Eigen::Index len = std::min<Eigen::Index>(kVarianceChunk, X.rows() - start);
    const Eigen::MatrixXd kfx = rbf_kernel(F, X.middleRows(start, len), chi);
    const Eigen::MatrixXd v = llt.matrixL().solve(kfx);
    var.segment(start, len) = (1.0 - v.colwise().squaredNorm().array()).matrix().transpose();
  }
  return var;
}

std::size_t sample_size(std::size_t n_rows, double rho, std::size_t cap) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ParameterError("sampling ratio rho must lie in (0, 1]");
  // Guard against 0.05 * 1000 evaluating to 50.000000000000007.
  const double raw = rho * static_cast<double>(n_rows);
  const double rounded = std::round(raw);
  const auto ceil_n = static_cast<std::size_t>(std::fabs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw));
  return std::min(cap, ceil_n);
}

std::vector<std::size_t> top_variance_rows(const Eigen::VectorXd& variances,
                                           const std::vector<std::size_t>& row_ids, std::size_t s) {
  std::vector<std::size_t> order(row_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double va = variances(static_cast<Eigen::Index>(a));
    const double vb = variances(static_cast<Eigen::Index>(b));
    if (va != vb) return va > vb;
    return row_ids[a] < row_ids[b];
  });
  order.resize(std::min(s, order.size()));
  return order;
}

SampleSet select_uncertain(const Table& t, const SamplerConfig& cfg) {
  const std::size_t n = t.n_rows();
  const std::size_t s = sample_size(n, cfg.rho, cfg.cap);
  Rng rng(cfg.seed);

  std::vector<std::size_t> candidates(n);
  std::iota(candidates.begin(), candidates.end(), 0);
  Table scored = t;
  if (n > cfg.max_rows) {
    candidates = rng.sample_without_replacement(n, cfg.max_rows);
    std::sort(candidates.begin(), candidates.end());
    std::vector<std::vector<std::string>> rows;
    rows.reserve(candidates.size());
    for (auto i : candidates) rows.push_back(t.row(i));
    std::vector<std::string> names;
    for (const auto& a : t.attributes()) names.push_back(a.name);
    scored = Table(std::move(names), std::move(rows));
  }
  const FeatureMatrix fm = featurize(scored, cfg.pca_dim);
  const std::size_t c = candidates.size();
  const auto fit_size = std::min(
      c, std::max(cfg.min_fit, static_cast<std::size_t>(std::ceil(cfg.fit_fraction * static_cast<double>(c)))));
  std::vector<std::size_t> fit_local = rng.sample_without_replacement(c, fit_size);

  SampleSet out;
  out.chi = cfg.chi ? *cfg.chi : median_pairwise_distance(fm.X, fit_local);
  const Eigen::VectorXd var = gp_predictive_variance(fm.X, fit_local, out.chi, &out.jitter);
  for (auto f : fit_local) out.fit_rows.push_back(candidates[f]);

  for (std::size_t local : top_variance_rows(var, candidates, s)) {
    out.indices.push_back(candidates[local]);
    out.variances.push_back(var(static_cast<Eigen::Index>(local)));
  }
  return out;
}

SampleSet partition(SampleSet s, std::size_t partition_size) {
  if (partition_size == 0) throw ParameterError("partition size must be at least 1");
  if (s.indices.empty()) throw InsufficientDataError("cannot partition an empty sample");
  s.partitions.clear();
  for (std::size_t start = 0; start < s.indices.size(); start += partition_size) {
    const std::size_t end = std::min(s.indices.size(), start + partition_size);
    s.partitions.emplace_back(s.indices.begin() + static_cast<std::ptrdiff_t>(start),
                              s.indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return s;
}

nlohmann::ordered_json sample_to_json(const SampleSet& s) {
  nlohmann::ordered_json j;
  j["indices"] = s.indices;
  j["variances"] = s.variances;
  j["partitions"] = s.partitions;
  j["fit_rows"] = s.fit_rows;
  j["chi"] = s.chi;
  j["jitter"] = s.jitter;
  return j;
}

SampleSet sample_from_json(const nlohmann::json& j) {
  SampleSet s;
  s.indices = j.at("indices").get<std::vector<std::size_t>>();
  s.variances = j.at("variances").get<std::vector<double>>();
  s.partitions = j.at("partitions").get<std::vector<std::vector<std::size_t>>>();
  s.fit_rows = j.value("fit_rows", std::vector<std::size_t>{});
  s.chi = j.value("chi", 0.0);
  s.jitter = j.value("jitter", 0.0);
  return s;
}

}  // namespace forested
