#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "forested/table.hpp"

namespace forested {

class InsufficientDataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ParameterError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One pre-PCA feature: either a z-scored numeric attribute or a one-hot indicator.
struct FeatureColumn {
  std::size_t attribute = 0;
  /// Empty for numeric features; the category (or "<other>") for one-hot features.
  std::string category;
  bool numeric = false;
  double mean = 0.0;
  double scale = 1.0;
};

struct FeatureMatrix {
  /// N x d after PCA.
  Eigen::MatrixXd X;
  /// N x p encoded features before centering and PCA.
  Eigen::MatrixXd encoded;
  std::vector<FeatureColumn> columns;
  /// Eigenvalues of the (1/N) covariance of `encoded`, descending.
  Eigen::VectorXd eigenvalues;
  /// p x d projection.
  Eigen::MatrixXd components;
  Eigen::RowVectorXd center;

  std::size_t d() const { return static_cast<std::size_t>(X.cols()); }
};

inline constexpr std::size_t kTopCategories = 20;

/// Numeric attributes z-scored (population std, missing imputed to 0), other attributes one-hot
/// over their top-20 categories plus an "other" bucket; zero-variance features dropped.
FeatureMatrix encode_features(const Table& t);

FeatureMatrix featurize(const Table& t, std::size_t pca_dim = 16);

Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& X, double chi);
Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double chi);

/// Var[g(x)] = k(x,x) - k_xF (K_FF + jitter I)^-1 k_Fx for every row of X.
/// Climbs the jitter ladder 1e-8 .. 1e-2 until the Cholesky factorisation succeeds.
Eigen::VectorXd gp_predictive_variance(const Eigen::MatrixXd& X,
                                       const std::vector<std::size_t>& fit_rows, double chi,
                                       double* jitter_used = nullptr);

/// Median pairwise Euclidean distance among the given rows; 1.0 if that is zero.
double median_pairwise_distance(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows);

/// s = min(cap, ceil(rho * N)).
std::size_t sample_size(std::size_t n_rows, double rho, std::size_t cap);

struct SampleSet {
  std::vector<std::size_t> indices;
  std::vector<double> variances;
  std::vector<std::vector<std::size_t>> partitions;
  std::vector<std::size_t> fit_rows;
  double chi = 0.0;
  double jitter = 0.0;
};

struct SamplerConfig {
  double rho = 0.05;
  std::size_t cap = 100;
  /// Length scale; unset means median pairwise distance over the fit subset.
  std::optional<double> chi;
  double fit_fraction = 0.1;
  std::size_t min_fit = 10;
  std::size_t pca_dim = 16;
  /// Tables larger than this are subsampled (seeded) before scoring.
  std::size_t max_rows = 20000;
  std::uint64_t seed = 0;
};

SampleSet select_uncertain(const Table& t, const SamplerConfig& cfg);

/// Rank rows by descending variance, ties by ascending row index, and keep the first s.
std::vector<std::size_t> top_variance_rows(const Eigen::VectorXd& variances,
                                           const std::vector<std::size_t>& row_ids, std::size_t s);

/// Contiguous partitions of `partition_size` in selection order; the last may be smaller.
SampleSet partition(SampleSet s, std::size_t partition_size);

nlohmann::ordered_json sample_to_json(const SampleSet& s);
SampleSet sample_from_json(const nlohmann::json& j);

}  // namespace forested
