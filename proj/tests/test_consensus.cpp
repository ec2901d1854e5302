#include <gtest/gtest.h>

#include <cmath>

#include "forested/consensus.hpp"
#include "forested/rng.hpp"
#include "oracles.hpp"

using namespace forested;

namespace {

std::vector<ErrorMatrix> random_preds(std::size_t R, std::size_t n, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> votes(R, std::vector<int>(n * m));
  for (auto& v : votes) {
    for (auto& x : v) x = rng.bernoulli(0.3) ? 1 : 0;
  }
  return oracle::to_matrices(votes, n, m);
}

}  // namespace

TEST(Consensus, VoteInitialisationIsVoteFraction) {
  const auto preds = oracle::to_matrices({{1, 0, 1}, {1, 0, 0}, {1, 1, 0}, {0, 0, 0}}, 1, 3);
  const auto g = init_posteriors(preds);
  EXPECT_DOUBLE_EQ(g[0][1], 0.75);
  EXPECT_DOUBLE_EQ(g[1][1], 0.25);
  EXPECT_DOUBLE_EQ(g[2][1], 0.25);
  for (const auto& c : g) EXPECT_DOUBLE_EQ(c[0] + c[1], 1.0);
}

TEST(Consensus, MStepMatchesHandCounts) {
  // One tree, two cells: posterior mass of y=1 is 0.8 on cell 0 (vote 1) and 0.1 on cell 1 (vote 0).
  const auto preds = oracle::to_matrices({{1, 0}}, 1, 2);
  const Posteriors gamma{{0.2, 0.8}, {0.9, 0.1}};
  const auto ms = m_step(gamma, preds, 0.0);
  EXPECT_NEAR(ms.theta[0][1][1], 0.8 / 0.9, 1e-15);
  EXPECT_NEAR(ms.theta[0][0][0], 0.9 / 1.1, 1e-15);
  EXPECT_NEAR(ms.eta[1], 0.45, 1e-15);
}

TEST(Consensus, EStepMatchesBayesRule) {
  const auto preds = oracle::to_matrices({{1}, {0}}, 1, 1);
  const std::vector<Confusion> theta{{{{0.9, 0.1}, {0.2, 0.8}}}, {{{0.7, 0.3}, {0.4, 0.6}}}};
  const std::array<double, 2> eta{0.6, 0.4};
  const auto g = e_step(theta, eta, preds);
  const double p1 = 0.4 * 0.8 * 0.4;
  const double p0 = 0.6 * 0.1 * 0.7;
  EXPECT_NEAR(g[0][1], p1 / (p0 + p1), 1e-15);
}

TEST(Consensus, MatchesReferenceImplementation) {
  const auto crowd = oracle::planted_crowd(600, {0.9, 0.75, 0.6, 0.85}, 0.2, 99);
  const auto ref = oracle::reference_em(crowd.votes);
  const auto res = run_em(oracle::to_matrices(crowd.votes, 100, 6));
  ASSERT_EQ(res.state.iterations, ref.iterations);
  for (std::size_t c = 0; c < ref.labels.size(); ++c) {
    ASSERT_EQ(res.consensus.data()[c], ref.labels[c]) << "cell " << c;
  }
  for (std::size_t r = 0; r < ref.theta.size(); ++r) {
    for (int y = 0; y < 2; ++y) {
      for (int k = 0; k < 2; ++k) EXPECT_NEAR(res.state.theta[r][y][k], ref.theta[r][y][k], 1e-9);
    }
  }
  EXPECT_NEAR(res.state.eta[1], ref.eta[1], 1e-9);
}

TEST(Consensus, ElboEqualsLikelihoodAfterEStep) {
  const auto preds = random_preds(4, 20, 5, 3);
  const auto init = init_posteriors(preds);
  const auto ms = m_step(init, preds);
  const auto g = e_step(ms.theta, ms.eta, preds);
  EXPECT_NEAR(elbo(g, ms.theta, ms.eta, preds), marginal_log_likelihood(ms.theta, ms.eta, preds), 1e-9);
  std::vector<std::vector<int>> votes;
  for (const auto& p : preds) votes.emplace_back(p.data().begin(), p.data().end());
  EXPECT_NEAR(marginal_log_likelihood(ms.theta, ms.eta, preds), oracle::log_likelihood(votes, ms.theta, ms.eta), 1e-9);
}

TEST(Consensus, ElboTraceNeverDecreases) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto res = run_em(random_preds(1 + seed % 5, 30, 4, seed));
    for (std::size_t k = 1; k < res.state.elbo_trace.size(); ++k) {
      EXPECT_GE(res.state.elbo_trace[k], res.state.elbo_trace[k - 1] - 1e-9) << "seed " << seed << " step " << k;
    }
  }
}

TEST(Consensus, UnanimousTreesAreReproduced) {
  const std::vector<int> v{1, 0, 0, 1, 0, 0};
  const auto res = run_em(oracle::to_matrices({v, v, v}, 2, 3));
  for (std::size_t c = 0; c < v.size(); ++c) EXPECT_EQ(res.consensus.data()[c], v[c]);
  EXPECT_FALSE(res.state.flipped);
}

TEST(Consensus, SingleTreeIsReproduced) {
  const auto preds = random_preds(1, 10, 3, 8);
  const auto res = run_em(preds);
  EXPECT_TRUE(res.consensus.same_entries(preds[0]));
}

TEST(Consensus, LabelSymmetry) {
  // Complementing every vote complements the consensus.
  const auto crowd = oracle::planted_crowd(300, {0.9, 0.8, 0.7}, 0.3, 5);
  auto flipped = crowd.votes;
  for (auto& v : flipped) {
    for (auto& x : v) x = 1 - x;
  }
  const auto a = run_em(oracle::to_matrices(crowd.votes, 50, 6));
  const auto b = run_em(oracle::to_matrices(flipped, 50, 6));
  for (std::size_t c = 0; c < 300; ++c) {
    if (std::abs(a.state.gamma[c][1] - 0.5) > 1e-6) EXPECT_NE(a.consensus.data()[c], b.consensus.data()[c]);
  }
}

TEST(Consensus, TieGoesToClean) {
  // Two symmetric trees that always disagree leave every posterior at exactly one half.
  const auto res = run_em(oracle::to_matrices({{1, 0}, {0, 1}}, 1, 2));
  EXPECT_DOUBLE_EQ(res.state.gamma[0][1], 0.5);
  EXPECT_EQ(res.consensus.count_ones(), 0u);
}

TEST(Consensus, RowsOfThetaAndGammaAreDistributions) {
  const auto res = run_em(random_preds(5, 40, 5, 21));
  for (const auto& t : res.state.theta) {
    EXPECT_NEAR(t[0][0] + t[0][1], 1.0, 1e-12);
    EXPECT_NEAR(t[1][0] + t[1][1], 1.0, 1e-12);
  }
  for (const auto& g : res.state.gamma) EXPECT_NEAR(g[0] + g[1], 1.0, 1e-12);
  EXPECT_NEAR(res.state.eta[0] + res.state.eta[1], 1.0, 1e-12);
}

TEST(Consensus, ShapeMismatchThrows) {
  std::vector<ErrorMatrix> preds{ErrorMatrix(2, 3), ErrorMatrix(3, 2)};
  EXPECT_THROW(run_em(preds), ShapeError);
  EXPECT_THROW(run_em({}), ShapeError);
}

TEST(Consensus, ReliabilityIsMeanDiagonal) {
  ConsensusState s;
  s.theta = {{{{0.9, 0.1}, {0.3, 0.7}}}};
  EXPECT_DOUBLE_EQ(s.reliability(0), 0.8);
}

TEST(Consensus, JsonCarriesTrace) {
  const auto res = run_em(random_preds(3, 5, 2, 1));
  const auto j = consensus_to_json(res.state);
  EXPECT_EQ(j["trees"].size(), 3u);
  EXPECT_EQ(j["elbo_trace"].size(), res.state.elbo_trace.size());
  EXPECT_EQ(j["iterations"].get<std::size_t>(), res.state.iterations);
}
