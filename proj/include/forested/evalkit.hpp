#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "forested/consensus.hpp"
#include "forested/table.hpp"

namespace forested {

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

/// Positive class is "error". Zero predicted positives gives precision 0.
Metrics metrics(const ErrorMatrix& pred, const ErrorMatrix& truth);
nlohmann::ordered_json metrics_to_json(const Metrics& m);

enum class ErrorType { missing_value, typo, pattern_violation, outlier, rule_violation };
std::string to_string(ErrorType t);

struct FunctionalDependency {
  std::vector<std::string> lhs;
  std::string rhs;
};

FunctionalDependency parse_fd(const std::string& text);  // "zip,state->city"
std::string to_string(const FunctionalDependency& fd);

class SpecError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InjectionSpec {
  double missing_value = 0.0;
  double typo = 0.0;
  double pattern_violation = 0.0;
  double outlier = 0.0;
  double rule_violation = 0.0;
  std::vector<FunctionalDependency> fds;
  std::uint64_t seed = 0;

  double total() const { return missing_value + typo + pattern_violation + outlier + rule_violation; }
  double rate(ErrorType t) const;
};

/// Splits `total_rate` evenly over the five types, or over four when no FD is given.
InjectionSpec uniform_spec(double total_rate, std::vector<FunctionalDependency> fds, std::uint64_t seed);

struct InjectionRecord {
  std::size_t row = 0;
  std::size_t col = 0;
  ErrorType type = ErrorType::typo;
  std::string before;
  std::string after;
};

struct InjectionResult {
  Table dirty;
  ErrorMatrix truth;
  std::vector<InjectionRecord> log;
};

/// Number of cells per type: round(total * N * M) split by largest remainder, ties in type order.
std::vector<std::size_t> injection_counts(const InjectionSpec& spec, std::size_t cells);

/// Mutates distinct cells so that each one differs from its clean text. Throws SpecError when a
/// type has fewer eligible cells than requested.
InjectionResult inject_errors(const Table& clean, const InjectionSpec& spec);

/// Single-character substitution or adjacent transposition.
std::string typo_edit(const std::string& value, std::uint64_t seed);

std::string injection_log_to_csv(const std::vector<InjectionRecord>& log);

/// Sample correlation; empty when either side has zero variance or fewer than two points.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

struct ReliabilityRow {
  std::size_t tree = 0;
  double reliability = 0.0;
  double f1 = 0.0;
};

struct ReliabilityReport {
  std::vector<ReliabilityRow> rows;
  std::optional<double> pearson_r;

  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

/// Pairs each tree's mean confusion diagonal with its F1. Needs at least three trees.
ReliabilityReport reliability_report(const ConsensusState& state, const std::vector<Metrics>& per_tree);

/// Copies `truth` and flips each cell independently with probability 1 - accuracy.
ErrorMatrix simulate_annotator(const ErrorMatrix& truth, double accuracy, std::uint64_t seed);

}  // namespace forested
