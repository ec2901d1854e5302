#include "forested/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <cstring>

#include "forested/hashing.hpp"
#include "forested/rng.hpp"
#include "forested/sampler.hpp"

namespace forested {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::RowVectorXd cell_features(const std::string& value, std::size_t d_e, std::uint64_t seed) {
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(static_cast<Index>(d_e + 1));
  if (value.empty()) {
    h(static_cast<Index>(d_e)) = 1.0;
    return h;
  }
  const std::string marked = "^" + value + "$";
  for (std::size_t n = 2; n <= 3; ++n) {
    if (marked.size() < n) continue;
    for (std::size_t k = 0; k + n <= marked.size(); ++k) {
      h(static_cast<Index>(fnv1a64(std::string_view(marked).substr(k, n), seed) % d_e)) += 1.0;
    }
  }
  const double norm = h.head(static_cast<Index>(d_e)).norm();
  if (norm > 0.0) h.head(static_cast<Index>(d_e)) /= norm;
  return h;
}

BipartiteGraph build_bipartite_graph(const Table& t, std::size_t d_e, std::uint64_t seed) {
  if (d_e == 0) throw ParameterError("edge feature dimension must be positive");
  BipartiteGraph g;
  g.n_tuples = t.n_rows();
  g.n_attributes = t.n_cols();
  g.edge_features.resize(static_cast<Index>(g.n_tuples * g.n_attributes), static_cast<Index>(d_e + 1));
  for (std::size_t i = 0; i < g.n_tuples; ++i) {
    for (std::size_t j = 0; j < g.n_attributes; ++j) {
      g.edge_features.row(static_cast<Index>(i * g.n_attributes + j)) = cell_features(t.cell(i, j), d_e, seed);
    }
  }
  index_edges(g);
  return g;
}

void index_edges(BipartiteGraph& g) {
  std::map<std::vector<double>, Index> slots;
  const Index rows = g.edge_features.rows();
  const Index cols = g.edge_features.cols();
  g.edge_slot.assign(static_cast<std::size_t>(rows), 0);
  std::vector<Index> firsts;
  std::vector<double> key(static_cast<std::size_t>(cols));
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) key[static_cast<std::size_t>(c)] = g.edge_features(r, c);
    auto [it, inserted] = slots.emplace(key, static_cast<Index>(firsts.size()));
    if (inserted) firsts.push_back(r);
    g.edge_slot[static_cast<std::size_t>(r)] = it->second;
  }
  g.unique_features.resize(static_cast<Index>(firsts.size()), cols);
  for (std::size_t u = 0; u < firsts.size(); ++u) g.unique_features.row(static_cast<Index>(u)) = g.edge_features.row(firsts[u]);
}

namespace {

MatrixXd glorot(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
  }
  return m;
}

MatrixXd relu(const MatrixXd& x) { return x.cwiseMax(0.0); }

MatrixXd relu_mask(const MatrixXd& x) { return (x.array() > 0.0).cast<double>().matrix(); }

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

MatrixXd hcat(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerCache {
  std::vector<Index> rows;  // tuples whose update is computed
  MatrixXd in_t, in_a;      // N x k, M x k
  RowMat z_t;               // (|rows|*M) x H messages towards the listed tuples
  RowMat z_a;               // (N*M) x H messages towards attributes
  MatrixXd cat_t, cat_a;    // [in ; mean message]
  MatrixXd u_t, u_a;        // update pre-activations
  MatrixXd out_t, out_a;    // |rows| x H, M x H
};

std::vector<Index> all_rows(Index n) {
  std::vector<Index> r(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = i;
  return r;
}

LayerCache layer_forward(const BipartiteGraph& g, const MatrixXd& in_t, const MatrixXd& in_a, const MatrixXd& P,
                         const VectorXd& bp, const MatrixXd& W, const VectorXd& bw, const char* name,
                         std::vector<Index> rows) {
  const Index n = static_cast<Index>(g.n_tuples);
  const Index m = static_cast<Index>(g.n_attributes);
  const Index k = in_t.cols();
  const Index e = static_cast<Index>(g.edge_dim());
  const Index h = P.rows();
  const Index r = static_cast<Index>(rows.size());
  LayerCache c;
  c.rows = std::move(rows);
  c.in_t = in_t;
  c.in_a = in_a;
  const MatrixXd Ph = P.leftCols(k);
  const RowMat edge_term = g.unique_features * P.rightCols(e).transpose();  // U x H
  const RowMat node_t = in_t * Ph.transpose();
  const RowMat node_a = in_a * Ph.transpose();

  c.z_a.resize(n * m, h);
  RowMat agg_a = RowMat::Zero(m, h);
  for (Index i = 0; i < n; ++i) {
    const double* nt = node_t.row(i).data();
    for (Index j = 0; j < m; ++j) {
      const double* et = edge_term.row(g.edge_slot[static_cast<std::size_t>(i * m + j)]).data();
      double* za = c.z_a.row(i * m + j).data();
      double* aa = agg_a.row(j).data();
      for (Index q = 0; q < h; ++q) {
        za[q] = et[q] + nt[q] + bp[q];
        aa[q] += za[q] > 0.0 ? za[q] : 0.0;
      }
    }
  }
  c.z_t.resize(r * m, h);
  RowMat agg_t = RowMat::Zero(r, h);
  MatrixXd in_rows(r, k);
  for (Index s = 0; s < r; ++s) {
    const Index i = c.rows[static_cast<std::size_t>(s)];
    in_rows.row(s) = in_t.row(i);
    double* at = agg_t.row(s).data();
    for (Index j = 0; j < m; ++j) {
      const double* et = edge_term.row(g.edge_slot[static_cast<std::size_t>(i * m + j)]).data();
      const double* na = node_a.row(j).data();
      double* zt = c.z_t.row(s * m + j).data();
      for (Index q = 0; q < h; ++q) {
        zt[q] = et[q] + na[q] + bp[q];
        at[q] += zt[q] > 0.0 ? zt[q] : 0.0;
      }
    }
  }
  if (m > 0) agg_t /= static_cast<double>(m);
  if (n > 0) agg_a /= static_cast<double>(n);
  c.cat_t = hcat(in_rows, agg_t);
  c.cat_a = hcat(in_a, agg_a);
  c.u_t = c.cat_t * W.transpose();
  c.u_t.rowwise() += bw.transpose();
  c.u_a = c.cat_a * W.transpose();
  c.u_a.rowwise() += bw.transpose();
  c.out_t = relu(c.u_t);
  c.out_a = relu(c.u_a);
  if (!c.out_t.allFinite() || !c.out_a.allFinite()) {
    throw NumericalError(std::string("non-finite activation in ") + name);
  }
  return c;
}

struct LayerGrad {
  MatrixXd dP, dW;
  VectorXd dbp, dbw;
  MatrixXd d_in_t, d_in_a;  // N x k, M x k
};

/// d_out_t is |c.rows| x H.
LayerGrad layer_backward(const BipartiteGraph& g, const LayerCache& c, const MatrixXd& P, const MatrixXd& W,
                         const MatrixXd& d_out_t, const MatrixXd& d_out_a) {
  const Index n = static_cast<Index>(g.n_tuples);
  const Index m = static_cast<Index>(g.n_attributes);
  const Index k = c.in_t.cols();
  const Index e = static_cast<Index>(g.edge_dim());
  const Index h = P.rows();
  const Index r = static_cast<Index>(c.rows.size());
  LayerGrad out;
  const MatrixXd du_t = d_out_t.cwiseProduct(relu_mask(c.u_t));
  const MatrixXd du_a = d_out_a.cwiseProduct(relu_mask(c.u_a));
  out.dW = du_t.transpose() * c.cat_t + du_a.transpose() * c.cat_a;
  out.dbw = du_t.colwise().sum().transpose() + du_a.colwise().sum().transpose();
  const MatrixXd dcat_t = du_t * W;
  const MatrixXd dcat_a = du_a * W;
  const RowMat dagg_t = dcat_t.rightCols(h) / static_cast<double>(std::max<Index>(m, 1));
  const RowMat dagg_a = dcat_a.rightCols(h) / static_cast<double>(std::max<Index>(n, 1));

  // Both message directions read the shared edge term, so their gradients meet in its slot.
  RowMat dslot = RowMat::Zero(g.unique_features.rows(), h);
  RowMat dnode_t = RowMat::Zero(n, h);
  RowMat dnode_a = RowMat::Zero(m, h);
  for (Index i = 0; i < n; ++i) {
    double* dt = dnode_t.row(i).data();
    for (Index j = 0; j < m; ++j) {
      const double* za = c.z_a.row(i * m + j).data();
      const double* ga = dagg_a.row(j).data();
      double* d = dslot.row(g.edge_slot[static_cast<std::size_t>(i * m + j)]).data();
      for (Index q = 0; q < h; ++q) {
        const double b = za[q] > 0.0 ? ga[q] : 0.0;
        dt[q] += b;
        d[q] += b;
      }
    }
  }
  for (Index s = 0; s < r; ++s) {
    const Index i = c.rows[static_cast<std::size_t>(s)];
    const double* gt = dagg_t.row(s).data();
    for (Index j = 0; j < m; ++j) {
      const double* zt = c.z_t.row(s * m + j).data();
      double* da = dnode_a.row(j).data();
      double* d = dslot.row(g.edge_slot[static_cast<std::size_t>(i * m + j)]).data();
      for (Index q = 0; q < h; ++q) {
        const double a = zt[q] > 0.0 ? gt[q] : 0.0;
        da[q] += a;
        d[q] += a;
      }
    }
  }
  out.dbp = dslot.colwise().sum().transpose();
  const MatrixXd Ph = P.leftCols(k);
  out.dP.resize(h, k + e);
  out.dP.leftCols(k) = dnode_a.transpose() * c.in_a + dnode_t.transpose() * c.in_t;
  out.dP.rightCols(e) = dslot.transpose() * g.unique_features;
  out.d_in_t = dnode_t * Ph;
  for (Index s = 0; s < r; ++s) out.d_in_t.row(c.rows[static_cast<std::size_t>(s)]) += dcat_t.row(s).head(k);
  out.d_in_a = dcat_a.leftCols(k) + dnode_a * Ph;
  return out;
}

struct FullCache {
  LayerCache l1, l2;
  std::vector<Index> position;  // tuple -> row of l2.out_t, or -1
  // The head's first layer splits over [h_t ; h_a]: A1 [h_t ; h_a] = A1_t h_t + A1_a h_a.
  RowMat proj_t;  // |l2.rows| x H
  RowMat proj_a;  // M x H
};

/// `rows` limits the second layer's tuple side to the tuples the head will read.
FullCache full_forward(const BipartiteGraph& g, const GnnParams& p, std::vector<Index> rows) {
  const Index n = static_cast<Index>(g.n_tuples);
  const Index m = static_cast<Index>(g.n_attributes);
  if (static_cast<std::size_t>(m) != p.init_dim || g.edge_dim() != p.edge_dim) {
    throw std::invalid_argument("GNN parameter shapes do not match the graph");
  }
  if (g.edge_slot.size() != static_cast<std::size_t>(n * m)) throw std::invalid_argument("graph edge index is incomplete");
  FullCache c;
  const MatrixXd h0_t = MatrixXd::Ones(n, m);
  const MatrixXd h0_a = MatrixXd::Identity(m, m);
  c.l1 = layer_forward(g, h0_t, h0_a, p.P1, p.bp1, p.W1, p.bw1, "layer 1", all_rows(n));
  c.l2 = layer_forward(g, c.l1.out_t, c.l1.out_a, p.P2, p.bp2, p.W2, p.bw2, "layer 2", std::move(rows));
  c.position.assign(static_cast<std::size_t>(n), -1);
  for (std::size_t s = 0; s < c.l2.rows.size(); ++s) c.position[static_cast<std::size_t>(c.l2.rows[s])] = static_cast<Index>(s);
  const Index h = static_cast<Index>(p.hidden_dim);
  c.proj_t = c.l2.out_t * p.A1.leftCols(h).transpose();
  c.proj_a = c.l2.out_a * p.A1.rightCols(h).transpose();
  return c;
}

double head_logit(const FullCache& c, const GnnParams& p, Index i, Index j) {
  const Index h = static_cast<Index>(p.hidden_dim);
  const double* t = c.proj_t.row(c.position[static_cast<std::size_t>(i)]).data();
  const double* a = c.proj_a.row(j).data();
  double z = p.a2(0);
  for (Index q = 0; q < h; ++q) {
    const double u = t[q] + a[q] + p.a1(q);
    if (u > 0.0) z += p.A2(0, q) * u;
  }
  return z;
}

}  // namespace

GnnParams GnnParams::init(std::size_t init_dim, std::size_t hidden_dim, std::size_t edge_dim, std::uint64_t seed) {
  Rng rng(seed);
  const Index k = static_cast<Index>(init_dim);
  const Index h = static_cast<Index>(hidden_dim);
  const Index e = static_cast<Index>(edge_dim);
  GnnParams p;
  p.init_dim = init_dim;
  p.hidden_dim = hidden_dim;
  p.edge_dim = edge_dim;
  p.seed = seed;
  p.P1 = glorot(h, k + e, rng);
  p.W1 = glorot(h, k + h, rng);
  p.P2 = glorot(h, h + e, rng);
  p.W2 = glorot(h, 2 * h, rng);
  p.A1 = glorot(h, 2 * h, rng);
  p.A2 = glorot(1, h, rng);
  p.bp1 = VectorXd::Zero(h);
  p.bw1 = VectorXd::Zero(h);
  p.bp2 = VectorXd::Zero(h);
  p.bw2 = VectorXd::Zero(h);
  p.a1 = VectorXd::Zero(h);
  p.a2 = VectorXd::Zero(1);
  return p;
}

std::vector<std::string> GnnParams::tensor_names() const {
  return {"P1", "W1", "P2", "W2", "A1", "A2", "bp1", "bw1", "bp2", "bw2", "a1", "a2"};
}

std::vector<MatrixXd*> GnnParams::matrices() { return {&P1, &W1, &P2, &W2, &A1, &A2}; }
std::vector<VectorXd*> GnnParams::vectors() { return {&bp1, &bw1, &bp2, &bw2, &a1, &a2}; }
std::vector<const MatrixXd*> GnnParams::matrices() const { return {&P1, &W1, &P2, &W2, &A1, &A2}; }
std::vector<const VectorXd*> GnnParams::vectors() const { return {&bp1, &bw1, &bp2, &bw2, &a1, &a2}; }

bool GnnParams::all_finite() const {
  for (const auto* m : matrices()) {
    if (!m->allFinite()) return false;
  }
  for (const auto* v : vectors()) {
    if (!v->allFinite()) return false;
  }
  return true;
}

bool GnnParams::operator==(const GnnParams& o) const {
  if (init_dim != o.init_dim || hidden_dim != o.hidden_dim || edge_dim != o.edge_dim) return false;
  auto a = matrices();
  auto b = o.matrices();
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k]->rows() != b[k]->rows() || a[k]->cols() != b[k]->cols() || *a[k] != *b[k]) return false;
  }
  auto va = vectors();
  auto vb = o.vectors();
  for (std::size_t k = 0; k < va.size(); ++k) {
    if (va[k]->size() != vb[k]->size() || *va[k] != *vb[k]) return false;
  }
  return true;
}


ForwardResult forward(const BipartiteGraph& g, const GnnParams& p) {
  const Index n = static_cast<Index>(g.n_tuples);
  const Index m = static_cast<Index>(g.n_attributes);
  FullCache c = full_forward(g, p, all_rows(n));
  ForwardResult f;
  f.tuple_embeddings = c.l2.out_t;
  f.attribute_embeddings = c.l2.out_a;
  f.logits.resize(n, m);
  f.probabilities.resize(n, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      f.logits(i, j) = head_logit(c, p, i, j);
      f.probabilities(i, j) = sigmoid(f.logits(i, j));
    }
  }
  if (!f.logits.allFinite()) throw NumericalError("non-finite activation in MLP head");
  return f;
}

double bce_loss(const ForwardResult& f, const std::vector<CellLabel>& labels) {
  double loss = 0.0;
  for (const auto& l : labels) {
    const double z = f.logits(static_cast<Index>(l.row), static_cast<Index>(l.col));
    // -[l log s(z) + (1-l) log(1 - s(z))] = softplus(z) - l z
    loss += softplus(z) - static_cast<double>(l.label) * z;
  }
  return loss;
}

LossAndGrad loss_and_gradient(const BipartiteGraph& g, const GnnParams& p, const std::vector<CellLabel>& labels) {
  const Index n = static_cast<Index>(g.n_tuples);
  const Index m = static_cast<Index>(g.n_attributes);
  const Index h = static_cast<Index>(p.hidden_dim);
  std::vector<Index> rows;
  {
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (const auto& l : labels) {
      if (l.row >= g.n_tuples || l.col >= g.n_attributes) throw std::out_of_range("label cell outside the graph");
      if (!seen[l.row]) {
        seen[l.row] = true;
        rows.push_back(static_cast<Index>(l.row));
      }
    }
    std::sort(rows.begin(), rows.end());
  }
  FullCache c = full_forward(g, p, rows);
  const Index r = static_cast<Index>(rows.size());
  LossAndGrad out;
  GnnParams& gr = out.grad;
  gr.init_dim = p.init_dim;
  gr.hidden_dim = p.hidden_dim;
  gr.edge_dim = p.edge_dim;
  gr.seed = p.seed;

  gr.A2 = MatrixXd::Zero(1, h);
  gr.a2 = VectorXd::Zero(1);
  gr.a1 = VectorXd::Zero(h);
  MatrixXd dproj_t = MatrixXd::Zero(r, h);
  MatrixXd dproj_a = MatrixXd::Zero(m, h);
  VectorXd u(h);
  for (const auto& l : labels) {
    const Index s = c.position[l.row];
    const Index j = static_cast<Index>(l.col);
    u = c.proj_t.row(s).transpose() + c.proj_a.row(j).transpose() + p.a1;
    const double z = p.a2(0) + p.A2.row(0).dot(u.cwiseMax(0.0));
    if (!std::isfinite(z)) throw NumericalError("non-finite activation in MLP head");
    out.loss += softplus(z) - static_cast<double>(l.label) * z;
    const double dz = sigmoid(z) - static_cast<double>(l.label);
    gr.A2.row(0) += dz * u.cwiseMax(0.0).transpose();
    gr.a2(0) += dz;
    for (Index q = 0; q < h; ++q) {
      if (u(q) <= 0.0) continue;
      const double du = dz * p.A2(0, q);
      gr.a1(q) += du;
      dproj_t(s, q) += du;
      dproj_a(j, q) += du;
    }
  }
  gr.A1.resize(h, 2 * h);
  gr.A1.leftCols(h) = dproj_t.transpose() * c.l2.out_t;
  gr.A1.rightCols(h) = dproj_a.transpose() * c.l2.out_a;
  const MatrixXd d_out_t = dproj_t * p.A1.leftCols(h);
  const MatrixXd d_out_a = dproj_a * p.A1.rightCols(h);

  LayerGrad g2 = layer_backward(g, c.l2, p.P2, p.W2, d_out_t, d_out_a);
  LayerGrad g1 = layer_backward(g, c.l1, p.P1, p.W1, g2.d_in_t, g2.d_in_a);
  gr.P2 = std::move(g2.dP);
  gr.W2 = std::move(g2.dW);
  gr.bp2 = std::move(g2.dbp);
  gr.bw2 = std::move(g2.dbw);
  gr.P1 = std::move(g1.dP);
  gr.W1 = std::move(g1.dW);
  gr.bp1 = std::move(g1.dbp);
  gr.bw1 = std::move(g1.dbw);
  return out;
}

TrainResult train(const BipartiteGraph& g, const std::vector<CellLabel>& labels, const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw ParameterError("epochs must be at least 1");
  if (!(cfg.learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
  if (labels.empty()) throw ParameterError("GNN training needs at least one labelled cell");
  for (const auto& l : labels) {
    if (l.row >= g.n_tuples || l.col >= g.n_attributes) throw std::out_of_range("label cell outside the graph");
  }
  TrainResult r;
  r.params = GnnParams::init(g.n_attributes, cfg.hidden_dim, g.edge_dim(), cfg.seed);
  r.loss_trace.reserve(cfg.epochs + 1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossAndGrad lg;
    try {
      lg = loss_and_gradient(g, r.params, labels);
    } catch (const NumericalError& e) {
      throw DivergenceError("GNN training diverged at epoch " + std::to_string(epoch) + " (" + e.what() +
                            "); try a smaller learning rate than " + std::to_string(cfg.learning_rate));
    }
    if (!std::isfinite(lg.loss)) {
      throw DivergenceError("GNN loss became non-finite at epoch " + std::to_string(epoch) +
                            "; try a smaller learning rate than " + std::to_string(cfg.learning_rate));
    }
    r.loss_trace.push_back(lg.loss);
    auto pm = r.params.matrices();
    auto gm = lg.grad.matrices();
    for (std::size_t k = 0; k < pm.size(); ++k) *pm[k] -= cfg.learning_rate * *gm[k];
    auto pv = r.params.vectors();
    auto gv = lg.grad.vectors();
    for (std::size_t k = 0; k < pv.size(); ++k) *pv[k] -= cfg.learning_rate * *gv[k];
    if (!r.params.all_finite()) {
      throw DivergenceError("GNN parameters became non-finite at epoch " + std::to_string(epoch) +
                            "; try a smaller learning rate");
    }
  }
  double final_loss = 0.0;
  try {
    final_loss = bce_loss(forward(g, r.params), labels);
  } catch (const NumericalError& e) {
    throw DivergenceError(std::string("GNN training diverged: ") + e.what());
  }
  if (!std::isfinite(final_loss)) throw DivergenceError("final GNN loss is non-finite");
  r.loss_trace.push_back(final_loss);
  return r;
}

bool infer_branch(double probability, double threshold) { return probability > threshold; }

bool infer_branch(const GnnParams& p, const BipartiteGraph& g, std::size_t i, std::size_t j, double threshold) {
  const auto f = forward(g, p);
  return infer_branch(f.probabilities(static_cast<Index>(i), static_cast<Index>(j)), threshold);
}

namespace {

std::string pack(const double* data, std::size_t count) {
  std::string bytes(count * 8, '\0');
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[k], 8);
    for (int b = 0; b < 8; ++b) bytes[k * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return base64_encode(bytes);
}

std::vector<double> unpack(const std::string& text, std::size_t count) {
  const std::string bytes = base64_decode(text);
  if (bytes.size() != count * 8) throw std::invalid_argument("tensor payload has the wrong length");
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[k * 8 + static_cast<std::size_t>(b)])) << (8 * b);
    }
    std::memcpy(&out[k], &bits, 8);
  }
  return out;
}

}  // namespace

nlohmann::ordered_json params_to_json(const GnnParams& p) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["dims"] = {{"init_dim", p.init_dim}, {"hidden_dim", p.hidden_dim}, {"edge_dim", p.edge_dim}, {"seed", p.seed}};
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  const auto names = p.tensor_names();
  std::size_t idx = 0;
  for (const auto* m : p.matrices()) {
    // Row-major payload.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = *m;
    tensors.push_back({{"name", names[idx++]},
                       {"shape", {rm.rows(), rm.cols()}},
                       {"data", pack(rm.data(), static_cast<std::size_t>(rm.size()))}});
  }
  for (const auto* v : p.vectors()) {
    tensors.push_back({{"name", names[idx++]},
                       {"shape", {v->size()}},
                       {"data", pack(v->data(), static_cast<std::size_t>(v->size()))}});
  }
  j["tensors"] = std::move(tensors);
  return j;
}

GnnParams params_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported GNN parameter version");
  GnnParams p;
  const auto& dims = j.at("dims");
  p.init_dim = dims.at("init_dim").get<std::size_t>();
  p.hidden_dim = dims.at("hidden_dim").get<std::size_t>();
  p.edge_dim = dims.at("edge_dim").get<std::size_t>();
  p.seed = dims.at("seed").get<std::uint64_t>();
  const auto names = p.tensor_names();
  const auto& tensors = j.at("tensors");
  if (tensors.size() != names.size()) throw std::invalid_argument("GNN parameter file has the wrong tensor count");
  auto mats = p.matrices();
  auto vecs = p.vectors();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto& t = tensors[k];
    if (t.at("name").get<std::string>() != names[k]) throw std::invalid_argument("unexpected tensor " + t.at("name").get<std::string>());
    const auto shape = t.at("shape").get<std::vector<Index>>();
    if (k < mats.size()) {
      if (shape.size() != 2) throw std::invalid_argument("matrix tensor needs a 2-d shape");
      auto data = unpack(t.at("data").get<std::string>(), static_cast<std::size_t>(shape[0] * shape[1]));
      *mats[k] = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(), shape[0], shape[1]);
    } else {
      if (shape.size() != 1) throw std::invalid_argument("vector tensor needs a 1-d shape");
      auto data = unpack(t.at("data").get<std::string>(), static_cast<std::size_t>(shape[0]));
      *vecs[k - mats.size()] = Eigen::Map<VectorXd>(data.data(), shape[0]);
    }
  }
  return p;
}

}  // namespace forested
