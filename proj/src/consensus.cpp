#include "forested/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace forested {

namespace {

void check_shapes(const std::vector<ErrorMatrix>& preds) {
  if (preds.empty()) throw ShapeError("consensus needs at least one prediction matrix");
  for (const auto& p : preds) {
    if (p.rows() != preds[0].rows() || p.cols() != preds[0].cols()) {
      throw ShapeError("prediction matrices differ in shape");
    }
  }
}

double xlogx_term(double g, double log_joint) {
  if (g <= 0.0) return 0.0;
  return g * (log_joint - std::log(g));
}

double log_joint(const std::vector<Confusion>& theta, const std::array<double, 2>& eta,
                 const std::vector<ErrorMatrix>& preds, std::size_t c, int y) {
  double s = std::log(eta[y]);
  for (std::size_t r = 0; r < preds.size(); ++r) s += std::log(theta[r][y][preds[r].data()[c]]);
  return s;
}

}  // namespace

double ConsensusState::reliability(std::size_t r) const {
  const auto& t = theta.at(r);
  return 0.5 * (t[0][0] + t[1][1]);
}

Posteriors init_posteriors(const std::vector<ErrorMatrix>& preds) {
  check_shapes(preds);
  const std::size_t cells = preds[0].rows() * preds[0].cols();
  const double R = static_cast<double>(preds.size());
  Posteriors gamma(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t ones = 0;
    for (const auto& p : preds) ones += p.data()[c];
    gamma[c][1] = static_cast<double>(ones) / R;
    gamma[c][0] = static_cast<double>(preds.size() - ones) / R;
  }
  return gamma;
}

Posteriors e_step(const std::vector<Confusion>& theta, const std::array<double, 2>& eta,
                  const std::vector<ErrorMatrix>& preds) {
  check_shapes(preds);
  if (theta.size() != preds.size()) throw ShapeError("one confusion matrix per tree is required");
  const std::size_t cells = preds[0].rows() * preds[0].cols();
  Posteriors gamma(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const double l0 = log_joint(theta, eta, preds, c, 0);
    const double l1 = log_joint(theta, eta, preds, c, 1);
    if (!std::isfinite(l0) && !std::isfinite(l1)) {
      gamma[c] = {0.5, 0.5};
      continue;
    }
    const double mx = std::max(l0, l1);
    const double e0 = std::exp(l0 - mx);
    const double e1 = std::exp(l1 - mx);
    gamma[c][1] = e1 / (e0 + e1);
    gamma[c][0] = 1.0 - gamma[c][1];
  }
  return gamma;
}

MStepResult m_step(const Posteriors& gamma, const std::vector<ErrorMatrix>& preds, double smoothing) {
  check_shapes(preds);
  const std::size_t cells = preds[0].rows() * preds[0].cols();
  if (gamma.size() != cells) throw ShapeError("posterior size does not match the predictions");
  MStepResult out;
  out.theta.resize(preds.size());
  for (std::size_t r = 0; r < preds.size(); ++r) {
    double num[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    const auto& d = preds[r].data();
    for (std::size_t c = 0; c < cells; ++c) {
      num[0][d[c]] += gamma[c][0];
      num[1][d[c]] += gamma[c][1];
    }
    for (int y = 0; y < 2; ++y) {
      const double a = num[y][0] + smoothing;
      const double b = num[y][1] + smoothing;
      out.theta[r][y][1] = b / (a + b);
      out.theta[r][y][0] = 1.0 - out.theta[r][y][1];
    }
  }
  double mass[2] = {0.0, 0.0};
  for (const auto& g : gamma) {
    mass[0] += g[0];
    mass[1] += g[1];
  }
  const double a = mass[0] + smoothing;
  const double b = mass[1] + smoothing;
  out.eta[1] = b / (a + b);
  out.eta[0] = 1.0 - out.eta[1];
  return out;
}

double elbo(const Posteriors& gamma, const std::vector<Confusion>& theta, const std::array<double, 2>& eta,
            const std::vector<ErrorMatrix>& preds) {
  check_shapes(preds);
  double f = 0.0;
  for (std::size_t c = 0; c < gamma.size(); ++c) {
    for (int y = 0; y < 2; ++y) f += xlogx_term(gamma[c][y], log_joint(theta, eta, preds, c, y));
  }
  return f;
}

double marginal_log_likelihood(const std::vector<Confusion>& theta, const std::array<double, 2>& eta,
                               const std::vector<ErrorMatrix>& preds) {
  check_shapes(preds);
  const std::size_t cells = preds[0].rows() * preds[0].cols();
  double ll = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    const double l0 = log_joint(theta, eta, preds, c, 0);
    const double l1 = log_joint(theta, eta, preds, c, 1);
    const double mx = std::max(l0, l1);
    ll += mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
  }
  return ll;
}

ConsensusResult run_em(const std::vector<ErrorMatrix>& preds, const EmConfig& cfg) {
  check_shapes(preds);
  ConsensusState s;
  s.rows = preds[0].rows();
  s.cols = preds[0].cols();
  s.gamma = init_posteriors(preds);
  auto ms = m_step(s.gamma, preds, cfg.smoothing);
  s.theta = std::move(ms.theta);
  s.eta = ms.eta;
  s.elbo_trace.push_back(elbo(s.gamma, s.theta, s.eta, preds));

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    auto next = e_step(s.theta, s.eta, preds);
    double delta = 0.0;
    for (std::size_t c = 0; c < next.size(); ++c) delta = std::max(delta, std::abs(next[c][1] - s.gamma[c][1]));
    s.gamma = std::move(next);
    ms = m_step(s.gamma, preds, cfg.smoothing);
    s.theta = std::move(ms.theta);
    s.eta = ms.eta;
    s.elbo_trace.push_back(elbo(s.gamma, s.theta, s.eta, preds));
    s.iterations = it + 1;
    if (delta < cfg.tol) {
      s.converged = true;
      break;
    }
  }

  ErrorMatrix out(s.rows, s.cols, MatrixKind::consensus, preds[0].column_names());
  auto decode = [&] {
    for (std::size_t c = 0; c < s.gamma.size(); ++c) out.set(c / s.cols, c % s.cols, s.gamma[c][1] > s.gamma[c][0]);
  };
  decode();

  if (s.eta[1] > 0.5) {
    double agreement = 0.0;
    for (const auto& p : preds) {
      std::size_t same = 0;
      for (std::size_t c = 0; c < s.gamma.size(); ++c) same += p.data()[c] == out.data()[c];
      agreement += static_cast<double>(same) / static_cast<double>(s.gamma.size());
    }
    agreement /= static_cast<double>(preds.size());
    if (agreement < 0.5) {
      for (auto& g : s.gamma) std::swap(g[0], g[1]);
      for (auto& t : s.theta) std::swap(t[0], t[1]);
      std::swap(s.eta[0], s.eta[1]);
      s.flipped = true;
      decode();
    }
  }
  return {std::move(out), std::move(s)};
}

nlohmann::ordered_json consensus_to_json(const ConsensusState& s) {
  nlohmann::ordered_json trees = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < s.theta.size(); ++r) {
    const auto& t = s.theta[r];
    nlohmann::ordered_json e;
    e["tree"] = r;
    e["theta"] = {{t[0][0], t[0][1]}, {t[1][0], t[1][1]}};
    e["reliability"] = s.reliability(r);
    trees.push_back(std::move(e));
  }
  nlohmann::ordered_json j;
  j["trees"] = std::move(trees);
  j["eta"] = {s.eta[0], s.eta[1]};
  j["iterations"] = s.iterations;
  j["converged"] = s.converged;
  j["flipped"] = s.flipped;
  j["elbo_trace"] = s.elbo_trace;
  return j;
}

}  // namespace forested
