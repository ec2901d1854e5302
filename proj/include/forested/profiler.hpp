#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "forested/table.hpp"

namespace forested {

enum class DataType { numeric, categorical, date, text };

std::string to_string(DataType t);

struct SummaryStats {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population standard deviation
  double min = 0.0;
  double max = 0.0;
};

struct ValueCount {
  std::string value;
  std::size_t count = 0;
};

struct InclusionDependency {
  std::size_t subset = 0;
  std::size_t superset = 0;
  /// The subset column has no non-missing values.
  bool vacuous = false;

  bool operator==(const InclusionDependency&) const = default;
};

struct AttributeProfile {
  std::string name;
  DataType data_type = DataType::text;
  double distinctness = 0.0;
  double missing_ratio = 0.0;
  std::vector<std::string> inclusion_deps;  // supersets of this attribute
  std::vector<ValueCount> representative_values;
  /// Set for numeric attributes with at least one parseable value.
  std::optional<SummaryStats> summary_stats;
};

struct DataProfile {
  std::size_t n_rows = 0;
  std::vector<AttributeProfile> attributes;
  std::vector<std::vector<double>> similarity;
  std::vector<std::vector<double>> correlation;
};

inline constexpr std::size_t kEmbeddingDim = 300;
inline constexpr std::size_t kHistogramBuckets = 64;
inline constexpr std::size_t kEmbeddingStats = 8;
inline constexpr std::size_t kValueHashBuckets = kEmbeddingDim - kHistogramBuckets - kEmbeddingStats;
inline constexpr std::size_t kMaxRepresentativeValues = 10;

using ColumnEmbedding = std::array<double, kEmbeddingDim>;

DataType infer_data_type(const std::vector<std::string>& column);

DataProfile profile(const Table& t);

ColumnEmbedding column_embedding(const Table& t, std::size_t j);
ColumnEmbedding column_embedding(const std::vector<std::string>& column, DataType type);

double cosine_similarity(const ColumnEmbedding& a, const ColumnEmbedding& b);

std::vector<InclusionDependency> inclusion_dependencies(const Table& t);

/// Pearson correlation over rows where both columns parse as numbers; 0 when undefined.
double pearson_correlation(const std::vector<std::string>& a, const std::vector<std::string>& b);
/// I(X;Y) / sqrt(H(X) H(Y)) over rows where both cells are non-missing; 0 when undefined.
double normalized_mutual_information(const std::vector<std::string>& a,
                                     const std::vector<std::string>& b);

nlohmann::ordered_json profile_to_json(const DataProfile& p);

}  // namespace forested
