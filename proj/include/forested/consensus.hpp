#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "json.hpp"

#include "forested/table.hpp"

namespace forested {

/// gamma[c][y] for cell c = i*M + j.
using Posteriors = std::vector<std::array<double, 2>>;
/// theta[y][y_hat]: probability that a tree predicts y_hat when the true label is y.
using Confusion = std::array<std::array<double, 2>, 2>;

struct ConsensusState {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Posteriors gamma;
  std::vector<Confusion> theta;
  std::array<double, 2> eta{0.5, 0.5};
  std::vector<double> elbo_trace;
  std::size_t iterations = 0;
  bool converged = false;
  /// The label-switching guard swapped the two classes.
  bool flipped = false;

  /// Mean diagonal of theta[r].
  double reliability(std::size_t r) const;
};

struct EmConfig {
  std::size_t max_iters = 100;
  double tol = 1e-4;
  double smoothing = 1e-6;
};

/// gamma0(y) = fraction of trees voting y.
Posteriors init_posteriors(const std::vector<ErrorMatrix>& preds);

/// gamma(y) proportional to eta_y * prod_r theta_r[y][pred_r], in log space.
Posteriors e_step(const std::vector<Confusion>& theta, const std::array<double, 2>& eta,
                  const std::vector<ErrorMatrix>& preds);

struct MStepResult {
  std::vector<Confusion> theta;
  std::array<double, 2> eta{0.5, 0.5};
};

/// Expected-count estimates with additive smoothing on numerators and denominators.
MStepResult m_step(const Posteriors& gamma, const std::vector<ErrorMatrix>& preds, double smoothing = 1e-6);

/// sum_c sum_y gamma(y) [log eta_y + sum_r log theta_r[y][pred_r] - log gamma(y)], with 0 log 0 = 0.
double elbo(const Posteriors& gamma, const std::vector<Confusion>& theta, const std::array<double, 2>& eta,
            const std::vector<ErrorMatrix>& preds);

/// log p(predictions | theta, eta), summed over cells.
double marginal_log_likelihood(const std::vector<Confusion>& theta, const std::array<double, 2>& eta,
                               const std::vector<ErrorMatrix>& preds);

struct ConsensusResult {
  ErrorMatrix consensus;
  ConsensusState state;
};

/// Dawid-Skene EM from the vote initialisation. Stops when max |delta gamma| < tol.
/// MAP decoding with ties at 0.5 going to 0.
ConsensusResult run_em(const std::vector<ErrorMatrix>& preds, const EmConfig& cfg = {});

/// {"trees": [{"tree", "theta", "reliability"}], "eta", "iterations", "converged", "flipped", "elbo_trace"}.
nlohmann::ordered_json consensus_to_json(const ConsensusState& s);

}  // namespace forested
