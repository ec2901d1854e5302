#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "forested/evalkit.hpp"
#include "forested/sampler.hpp"
#include "forested/synthetic.hpp"
#include "oracles.hpp"

using namespace forested;

TEST(Sampler, SampleSizeFormula) {
  EXPECT_EQ(sample_size(50, 0.05, 100), 3u);
  EXPECT_EQ(sample_size(1000, 0.05, 100), 50u);
  EXPECT_EQ(sample_size(2000, 0.05, 100), 100u);
  EXPECT_EQ(sample_size(200000, 0.05, 100), 100u);
  EXPECT_EQ(sample_size(10, 1.0, 100), 10u);
}

TEST(Sampler, RbfKernelValues) {
  Eigen::MatrixXd X(2, 2);
  X << 0, 0, 3, 4;
  const auto K = rbf_kernel(X, 5.0);
  EXPECT_DOUBLE_EQ(K(0, 0), 1.0);
  EXPECT_NEAR(K(0, 1), std::exp(-25.0 / 50.0), 1e-15);
  EXPECT_EQ(K(0, 1), K(1, 0));
  EXPECT_THROW(rbf_kernel(X, 0.0), ParameterError);
}

TEST(Sampler, MedianPairwiseDistance) {
  Eigen::MatrixXd X(3, 1);
  X << 0, 1, 3;
  EXPECT_DOUBLE_EQ(median_pairwise_distance(X, {0, 1, 2}), 2.0);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(3, 2);
  EXPECT_DOUBLE_EQ(median_pairwise_distance(Z, {0, 1, 2}), 1.0);
}

TEST(Sampler, VarianceMatchesExplicitInverse) {
  Rng rng(4);
  Eigen::MatrixXd X(30, 3);
  for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = rng.uniform(-1, 1);
  const std::vector<std::size_t> fit{0, 4, 9, 17, 22};
  double jitter = 0;
  const auto v = gp_predictive_variance(X, fit, 0.8, &jitter);
  const auto ref = oracle::gp_variance(X, fit, 0.8, jitter);
  for (Eigen::Index i = 0; i < 30; ++i) EXPECT_NEAR(v(i), ref[static_cast<std::size_t>(i)], 1e-10);
  for (auto f : fit) EXPECT_LT(v(static_cast<Eigen::Index>(f)), 1e-6);
}

TEST(Sampler, TopVarianceTiesByIndex) {
  Eigen::VectorXd v(5);
  v << 0.2, 0.5, 0.5, 0.1, 0.9;
  EXPECT_EQ(top_variance_rows(v, {0, 1, 2, 3, 4}, 3), (std::vector<std::size_t>{4, 1, 2}));
}

TEST(Sampler, SelectionEqualsBruteForceRanking) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto clean = synthetic_hospital(120 + 20 * seed, seed);
    const auto dirty = inject_errors(clean, uniform_spec(0.1, synthetic_fds(), seed)).dirty;
    SamplerConfig cfg;
    cfg.rho = 0.2;
    cfg.seed = seed;
    const auto s = select_uncertain(dirty, cfg);
    const auto fm = featurize(dirty, cfg.pca_dim);
    const auto var = oracle::gp_variance(fm.X, s.fit_rows, s.chi, s.jitter);
    EXPECT_EQ(s.indices, oracle::top_s(var, sample_size(dirty.n_rows(), cfg.rho, cfg.cap))) << "seed " << seed;
  }
}

TEST(Sampler, PartitionsFollowSelectionOrder) {
  SampleSet s;
  for (std::size_t i = 0; i < 23; ++i) s.indices.push_back(100 - i);
  const auto p = partition(s, 10);
  ASSERT_EQ(p.partitions.size(), 3u);
  EXPECT_EQ(p.partitions[0].size(), 10u);
  EXPECT_EQ(p.partitions[2].size(), 3u);
  EXPECT_EQ(p.partitions[1].front(), 90u);
  EXPECT_THROW(partition(s, 0), ParameterError);
  EXPECT_THROW(partition(SampleSet{}, 10), InsufficientDataError);
}

TEST(Sampler, SelectionIsDeterministicAndDistinct) {
  const auto t = synthetic_hospital(200, 3);
  SamplerConfig cfg;
  cfg.seed = 9;
  cfg.rho = 0.3;
  const auto a = select_uncertain(t, cfg);
  const auto b = select_uncertain(t, cfg);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(std::set<std::size_t>(a.indices.begin(), a.indices.end()).size(), a.indices.size());
  EXPECT_EQ(a.indices.size(), 60u);
}

TEST(Sampler, FeaturesDropConstantColumns) {
  const Table t({"a", "b", "c"}, {{"1", "x", "k"}, {"2", "y", "k"}, {"4", "x", "k"}});
  const auto fm = encode_features(t);
  for (const auto& c : fm.columns) EXPECT_NE(c.attribute, 2u);
  const auto f = featurize(t, 16);
  EXPECT_EQ(f.X.rows(), 3);
  EXPECT_LE(f.d(), 3u);
}

TEST(Sampler, JsonRoundTrip) {
  const auto t = synthetic_hospital(60, 1);
  auto s = partition(select_uncertain(t, SamplerConfig{0.2}), 5);
  const auto back = sample_from_json(nlohmann::json::parse(sample_to_json(s).dump()));
  EXPECT_EQ(back.indices, s.indices);
  EXPECT_EQ(back.partitions, s.partitions);
  EXPECT_EQ(back.fit_rows, s.fit_rows);
}
