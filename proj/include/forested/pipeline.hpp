#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "forested/consensus.hpp"
#include "forested/evalkit.hpp"
#include "forested/gnn.hpp"
#include "forested/induction.hpp"
#include "forested/profiler.hpp"
#include "forested/sampler.hpp"
#include "forested/tree.hpp"

namespace forested {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kApiKeyVariable = "FORESTED_API_KEY";

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when no tree of a run survives. `exit_code` follows the CLI contract.
class RunFailure : public std::runtime_error {
 public:
  RunFailure(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

struct ProviderConfig {
  /// "http", "fixture" or "teacher". A non-empty mock_dir always selects fixture replay.
  std::string kind = "http";
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-5";
  std::string mock_dir;
  /// When set, every response is also stored there as a fixture.
  std::string record_dir;
  double temperature = 1.0;
  double timeout_seconds = 120.0;
  std::size_t retries = 3;
  std::size_t max_in_flight = 4;
  /// Teacher only: the clean table and the FDs it routes through its GnnNode.
  std::string teacher_clean;
  std::vector<std::string> teacher_fds;
};

struct RunConfig {
  double rho = 0.05;
  std::size_t sample_cap = 100;
  std::size_t partition_size = 10;
  std::size_t max_trees = 10;
  std::size_t min_depth = 4;
  std::size_t max_depth = 8;
  std::size_t pca_dim = 16;
  TrainConfig gnn;
  EmConfig em;
  ProviderConfig provider;
  std::uint64_t seed = 0;
  bool disable_gnn_nodes = false;
  bool disable_ensemble = false;
  /// Execution setting only: never changes outputs, so it is not part of the recorded config.
  std::size_t workers = 1;
};

/// Overlays a JSON document on `base`. Unknown keys and invalid values raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
nlohmann::ordered_json config_to_json(const RunConfig& cfg);
void validate_config(const RunConfig& cfg);

SamplerConfig sampler_config(const RunConfig& cfg);

/// Builds the provider the config names. The HTTP provider needs FORESTED_API_KEY.
std::unique_ptr<LlmProvider> make_provider(const RunConfig& cfg, const Table& dirty);

enum class TreeStatus { ok, timeout, failed };
std::string to_string(TreeStatus s);

struct TreeOutcome {
  std::size_t index = 0;
  std::vector<std::size_t> rows;
  TreeStatus status = TreeStatus::failed;
  std::string message;
  std::string prompt;
  std::string raw;
  std::size_t attempts = 0;
  std::vector<ValidationReport> failed_attempts;
  std::optional<InductionOutput> output;
  std::optional<DecisionTree> tree;
  std::vector<GnnTrainingSummary> training;
  std::optional<Prediction> prediction;
};

struct RunResult {
  bool forest = true;
  DataProfile profile;
  SampleSet sample;
  std::vector<TreeOutcome> trees;
  /// Consensus for forest runs; the single tree's matrix for single-tree runs or with disable_ensemble.
  ErrorMatrix prediction;
  std::optional<ConsensusResult> consensus;
  /// Indices into `trees` of the predictions passed to EM, in order.
  std::vector<std::size_t> used_trees;
  std::optional<Metrics> metrics;
  std::vector<Metrics> per_tree_metrics;
  std::vector<std::string> warnings;
};

/// Induces, trains and runs one tree on the given sampled rows. Never throws for provider or
/// validation problems; those are reported through the status.
TreeOutcome run_tree(const RunConfig& cfg, const Table& dirty, const DataProfile& profile,
                     const BipartiteGraph& graph, std::vector<std::size_t> rows, std::size_t index,
                     LlmProvider& provider);

/// Single tree: sample, take the first partition, induce, train, predict.
RunResult run_treeed(const RunConfig& cfg, const Table& dirty, LlmProvider& provider, const Table* clean = nullptr);

/// Forest: one tree per partition (up to max_trees) run on `workers` threads, then EM consensus.
RunResult run_forested(const RunConfig& cfg, const Table& dirty, LlmProvider& provider, const Table* clean = nullptr);

/// Writes every artifact of a run plus manifest.json (file digests, seed, config hash).
void write_run(const RunResult& r, const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace forested
