#include "forested/profiler.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "forested/hashing.hpp"
#include "forested/values.hpp"

namespace forested {

std::string to_string(DataType t) {
  switch (t) {
    case DataType::numeric: return "numeric";
    case DataType::categorical: return "categorical";
    case DataType::date: return "date";
    case DataType::text: return "text";
  }
  return "text";
}

namespace {

constexpr double kTypeThreshold = 0.95;
constexpr double kCategoricalDistinctness = 0.5;

std::vector<std::string> non_missing(const std::vector<std::string>& column) {
  std::vector<std::string> out;
  for (const auto& v : column) {
    if (!v.empty()) out.push_back(v);
  }
  return out;
}

double distinctness_of(const std::vector<std::string>& present) {
  if (present.empty()) return 0.0;
  std::set<std::string> unique(present.begin(), present.end());
  return static_cast<double>(unique.size()) / static_cast<double>(present.size());
}

/// Parseable values, sorted so that every reduction is independent of row order.
std::vector<double> sorted_numbers(const std::vector<std::string>& column) {
  std::vector<double> out;
  for (const auto& v : column) {
    if (auto x = parse_decimal(v)) out.push_back(*x);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<SummaryStats> summarize(const std::vector<double>& sorted) {
  if (sorted.empty()) return std::nullopt;
  SummaryStats s;
  const double n = static_cast<double>(sorted.size());
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  double ss = 0.0;
  for (double x : sorted) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / n);
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

double signed_log(double x) { return std::copysign(std::log1p(std::fabs(x)), x); }

std::vector<std::string> tokens_of(const std::string& value) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : value) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  if (tokens.empty()) tokens.push_back(value);
  return tokens;
}

std::vector<ValueCount> top_values(const std::vector<std::string>& present) {
  std::map<std::string, std::size_t> counts;
  for (const auto& v : present) ++counts[v];
  std::vector<ValueCount> all;
  all.reserve(counts.size());
  for (auto& [v, c] : counts) all.push_back({v, c});
  std::stable_sort(all.begin(), all.end(),
                   [](const ValueCount& a, const ValueCount& b) { return a.count > b.count; });
  if (all.size() > kMaxRepresentativeValues) all.resize(kMaxRepresentativeValues);
  return all;
}

double entropy(const std::map<std::string, std::size_t>& counts, double n) {
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

DataType infer_data_type(const std::vector<std::string>& column) {
  const auto present = non_missing(column);
  if (present.empty()) return DataType::numeric;
  const double n = static_cast<double>(present.size());
  std::size_t numeric = 0;
  std::size_t dates = 0;
  for (const auto& v : present) {
    if (parse_decimal(v)) ++numeric;
    if (looks_like_date(v)) ++dates;
  }
  if (static_cast<double>(numeric) >= kTypeThreshold * n) return DataType::numeric;
  if (static_cast<double>(dates) >= kTypeThreshold * n) return DataType::date;
  if (distinctness_of(present) < kCategoricalDistinctness) return DataType::categorical;
  return DataType::text;
}

ColumnEmbedding column_embedding(const std::vector<std::string>& column, DataType type) {
  ColumnEmbedding e{};
  const auto present = non_missing(column);
  if (present.empty()) return e;

  if (type != DataType::numeric) {
    std::size_t total = 0;
    std::vector<std::size_t> counts(kEmbeddingDim, 0);
    for (const auto& v : present) {
      for (const auto& tok : tokens_of(v)) {
        ++counts[fnv1a64(tok) % kEmbeddingDim];
        ++total;
      }
    }
    for (std::size_t b = 0; b < kEmbeddingDim; ++b) {
      e[b] = static_cast<double>(counts[b]) / static_cast<double>(total);
    }
    return e;
  }

  const auto numbers = sorted_numbers(column);
  if (!numbers.empty()) {
    const double lo = numbers.front();
    const double hi = numbers.back();
    std::vector<std::size_t> hist(kHistogramBuckets, 0);
    for (double x : numbers) {
      std::size_t b = 0;
      if (hi > lo) {
        b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(kHistogramBuckets));
        b = std::min(b, kHistogramBuckets - 1);
      }
      ++hist[b];
    }
    for (std::size_t b = 0; b < kHistogramBuckets; ++b) {
      e[b] = static_cast<double>(hist[b]) / static_cast<double>(numbers.size());
    }
    const auto stats = *summarize(numbers);
    const std::size_t integral = static_cast<std::size_t>(std::count_if(
        numbers.begin(), numbers.end(), [](double x) { return x == std::floor(x); }));
    const std::size_t base = kHistogramBuckets;
    e[base + 0] = signed_log(stats.mean);
    e[base + 1] = signed_log(stats.median);
    e[base + 2] = signed_log(stats.std);
    e[base + 3] = signed_log(stats.min);
    e[base + 4] = signed_log(stats.max);
    e[base + 5] = static_cast<double>(column.size() - present.size()) / static_cast<double>(column.size());
    e[base + 6] = distinctness_of(present);
    e[base + 7] = static_cast<double>(integral) / static_cast<double>(numbers.size());
  }
  std::vector<std::size_t> buckets(kValueHashBuckets, 0);
  for (const auto& v : present) ++buckets[fnv1a64(v) % kValueHashBuckets];
  const std::size_t offset = kHistogramBuckets + kEmbeddingStats;
  for (std::size_t b = 0; b < kValueHashBuckets; ++b) {
    e[offset + b] = static_cast<double>(buckets[b]) / static_cast<double>(present.size());
  }
  return e;
}

ColumnEmbedding column_embedding(const Table& t, std::size_t j) {
  if (j >= t.n_cols()) throw std::out_of_range("attribute index out of range");
  const auto col = t.column(j);
  return column_embedding(col, infer_data_type(col));
}

double cosine_similarity(const ColumnEmbedding& a, const ColumnEmbedding& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<InclusionDependency> inclusion_dependencies(const Table& t) {
  const std::size_t m = t.n_cols();
  std::vector<std::set<std::string>> sets(m);
  for (std::size_t j = 0; j < m; ++j) {
    for (const auto& v : t.column(j)) {
      if (!v.empty()) sets[j].insert(v);
    }
  }
  std::vector<InclusionDependency> out;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      if (j == k) continue;
      if (std::includes(sets[k].begin(), sets[k].end(), sets[j].begin(), sets[j].end())) {
        out.push_back({j, k, sets[j].empty()});
      }
    }
  }
  return out;
}

double pearson_correlation(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    auto x = parse_decimal(a[i]);
    auto y = parse_decimal(b[i]);
    if (x && y) pairs.emplace_back(*x, *y);
  }
  if (pairs.size() < 2) return 0.0;
  std::sort(pairs.begin(), pairs.end());
  const double n = static_cast<double>(pairs.size());
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : pairs) mx += x, my += y;
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (auto [x, y] : pairs) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double normalized_mutual_information(const std::vector<std::string>& a,
                                     const std::vector<std::string>& b) {
  std::map<std::string, std::size_t> ca, cb;
  std::map<std::pair<std::string, std::string>, std::size_t> joint;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    if (a[i].empty() || b[i].empty()) continue;
    ++ca[a[i]];
    ++cb[b[i]];
    ++joint[{a[i], b[i]}];
    ++n;
  }
  if (n == 0) return 0.0;
  const double dn = static_cast<double>(n);
  const double ha = entropy(ca, dn);
  const double hb = entropy(cb, dn);
  if (ha <= 0.0 || hb <= 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pxy = static_cast<double>(c) / dn;
    const double px = static_cast<double>(ca[key.first]) / dn;
    const double py = static_cast<double>(cb[key.second]) / dn;
    mi += pxy * std::log(pxy / (px * py));
  }
  return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

DataProfile profile(const Table& t) {
  if (t.n_rows() == 0) throw std::invalid_argument("profile requires at least one row");
  const std::size_t m = t.n_cols();
  DataProfile p;
  p.n_rows = t.n_rows();

  std::vector<std::vector<std::string>> columns(m);
  std::vector<ColumnEmbedding> embeddings(m);
  p.attributes.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    columns[j] = t.column(j);
    const auto present = non_missing(columns[j]);
    auto& a = p.attributes[j];
    a.name = t.attribute_name(j);
    a.data_type = infer_data_type(columns[j]);
    a.distinctness = distinctness_of(present);
    a.missing_ratio = static_cast<double>(columns[j].size() - present.size()) /
                      static_cast<double>(columns[j].size());
    a.representative_values = top_values(present);
    if (a.data_type == DataType::numeric) a.summary_stats = summarize(sorted_numbers(columns[j]));
    embeddings[j] = column_embedding(columns[j], a.data_type);
  }
  for (const auto& dep : inclusion_dependencies(t)) {
    p.attributes[dep.subset].inclusion_deps.push_back(t.attribute_name(dep.superset));
  }

  p.similarity.assign(m, std::vector<double>(m, 0.0));
  p.correlation.assign(m, std::vector<double>(m, 0.0));
  for (std::size_t j = 0; j < m; ++j) {
    p.similarity[j][j] = 1.0;
    p.correlation[j][j] = 1.0;
    for (std::size_t k = j + 1; k < m; ++k) {
      const double sim = cosine_similarity(embeddings[j], embeddings[k]);
      const bool both_numeric = p.attributes[j].data_type == DataType::numeric &&
                                p.attributes[k].data_type == DataType::numeric;
      const double corr = both_numeric ? pearson_correlation(columns[j], columns[k])
                                       : normalized_mutual_information(columns[j], columns[k]);
      p.similarity[j][k] = p.similarity[k][j] = sim;
      p.correlation[j][k] = p.correlation[k][j] = corr;
    }
  }
  return p;
}

namespace {
double round_to(double x, int digits) {
  const double scale = std::pow(10.0, digits);
  return std::round(x * scale) / scale;
}
}  // namespace

nlohmann::ordered_json profile_to_json(const DataProfile& p) {
  using nlohmann::ordered_json;
  ordered_json attrs = ordered_json::array();
  for (const auto& a : p.attributes) {
    ordered_json j;
    j["name"] = a.name;
    j["data_type"] = to_string(a.data_type);
    j["distinctness"] = round_to(a.distinctness, 4);
    j["missing_ratio"] = round_to(a.missing_ratio, 4);
    j["inclusion_dependencies"] = a.inclusion_deps;
    ordered_json reps = ordered_json::array();
    for (const auto& v : a.representative_values) reps.push_back({{"value", v.value}, {"count", v.count}});
    j["representative_values"] = reps;
    if (a.summary_stats) {
      const auto& s = *a.summary_stats;
      j["summary_stats"] = {{"mean", round_to(s.mean, 4)},
                            {"median", round_to(s.median, 4)},
                            {"std", round_to(s.std, 4)},
                            {"min", s.min},
                            {"max", s.max}};
    } else if (a.data_type == DataType::numeric) {
      j["summary_stats"] = nullptr;
    }
    attrs.push_back(std::move(j));
  }
  auto matrix = [](const std::vector<std::vector<double>>& m) {
    ordered_json out = ordered_json::array();
    for (const auto& row : m) {
      ordered_json r = ordered_json::array();
      for (double x : row) r.push_back(round_to(x, 3));
      out.push_back(std::move(r));
    }
    return out;
  };
  ordered_json out;
  out["n_rows"] = p.n_rows;
  out["attributes"] = std::move(attrs);
  out["similarity"] = matrix(p.similarity);
  out["correlation"] = matrix(p.correlation);
  return out;
}

}  // namespace forested
