#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "forested/profiler.hpp"
#include "forested/table.hpp"

namespace forested {

enum class NodeType { rule, gnn, leaf };

std::string to_string(NodeType t);

struct NodeSpec {
  std::string node_id;
  NodeType type = NodeType::leaf;
  std::string name;
  std::optional<std::string> code;
  std::optional<std::string> true_child;
  std::optional<std::string> false_child;
  std::optional<bool> leaf_value;
};

struct PathStep {
  std::string node_id;
  /// Absent on the terminal leaf.
  std::optional<int> branch;

  bool operator==(const PathStep&) const = default;
};

struct LabelSpec {
  std::size_t row_id = 0;
  std::string column;
  bool is_error = false;
  std::vector<PathStep> path;
};

struct InductionOutput {
  std::vector<NodeSpec> tree_structure;
  std::vector<LabelSpec> labels;
};

nlohmann::ordered_json node_spec_to_json(const NodeSpec& n);
nlohmann::ordered_json tree_structure_to_json(const std::vector<NodeSpec>& nodes);
nlohmann::ordered_json induction_output_to_json(const InductionOutput& out);

struct Violation {
  std::string code;
  std::string message;
};

struct ValidationContext {
  std::size_t min_depth = 4;
  std::size_t max_depth = 8;
  /// When non-empty, label columns and field("...") references must name these attributes.
  std::vector<std::string> columns;
  /// When non-empty, labels must cover exactly these rows times `columns`.
  std::vector<std::size_t> sampled_rows;
};

struct ValidationReport {
  std::optional<InductionOutput> output;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty() && output.has_value(); }
  std::string summary() const;
};

/// Parses and checks a raw LLM response. Text around the outermost JSON object (for example a
/// markdown fence) is ignored. Label paths are normalised so every step carries its branch.
ValidationReport check_output(const std::string& raw, const ValidationContext& ctx = {});

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

/// check_output, throwing ValidationError on any violation.
InductionOutput validate_output(const std::string& raw, const ValidationContext& ctx = {});

/// Depth in levels: nodes on the longest root-to-leaf path. Expects a well-formed tree.
std::size_t tree_depth(const std::vector<NodeSpec>& nodes);

struct PromptConfig {
  std::size_t min_depth = 4;
  std::size_t max_depth = 8;
};

struct InductionPrompt {
  std::string data_context;
  std::string tree_spec;
  std::string output_requirements;
  std::vector<std::size_t> rows;

  std::string render() const;
};

InductionPrompt build_prompt(const DataProfile& profile, const Table& t,
                             const std::vector<std::size_t>& rows, const PromptConfig& cfg = {});

/// Inverse of the sample-row block written into a rendered prompt.
std::vector<std::size_t> sample_rows_from_prompt(const std::string& rendered);

struct ChatMessage {
  std::string role;
  std::string content;
};

std::vector<ChatMessage> prompt_messages(const InductionPrompt& prompt);

/// Key under which a mock fixture is stored: sha256 of the message list serialised as JSON.
std::string prompt_key(const std::vector<ChatMessage>& messages);

struct CompletionParams {
  std::string model = "gpt-5";
  double temperature = 1.0;
  std::chrono::milliseconds timeout{std::chrono::seconds(120)};
};

class ProviderError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ProviderTimeout : public ProviderError {
  using ProviderError::ProviderError;
};

class LlmProvider {
 public:
  virtual ~LlmProvider() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) = 0;
};

/// Replays `<prompt-sha256>.json` response files from a directory.
class FixtureProvider : public LlmProvider {
 public:
  explicit FixtureProvider(std::filesystem::path dir);
  std::string complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;

 private:
  std::filesystem::path dir_;
};

/// Returns queued responses in order, regardless of the prompt. Used for contract tests.
class ScriptedProvider : public LlmProvider {
 public:
  struct Step {
    std::string text;
    bool timeout = false;
  };

  void push(std::string text) { steps_.push_back({std::move(text), false}); }
  void push_timeout() { steps_.push_back({"", true}); }
  /// When set, an exhausted queue repeats the last step instead of failing.
  void repeat_last(bool on) { repeat_last_ = on; }

  std::string complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;

  std::size_t calls() const;
  std::vector<std::vector<ChatMessage>> history() const;

 private:
  mutable std::mutex mu_;
  std::deque<Step> steps_;
  std::optional<Step> last_;
  bool repeat_last_ = false;
  std::vector<std::vector<ChatMessage>> history_;
};

/// OpenAI-compatible chat-completions client.
class HttpProvider : public LlmProvider {
 public:
  HttpProvider(std::string base_url, std::string api_key, std::size_t max_in_flight = 4);
  ~HttpProvider() override;

  std::string complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;

  /// Request body sent for the given messages.
  static nlohmann::ordered_json request_body(const std::vector<ChatMessage>& messages,
                                             const CompletionParams& params);

 private:
  struct Gate;
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
  std::unique_ptr<Gate> gate_;
};

class InductionFailure : public std::runtime_error {
 public:
  explicit InductionFailure(std::vector<ValidationReport> attempts);
  const std::vector<ValidationReport>& attempts() const { return attempts_; }

 private:
  std::vector<ValidationReport> attempts_;
};

struct InductionResult {
  InductionOutput output;
  std::string raw;
  std::size_t attempts = 0;
};

/// Calls the provider and re-prompts with the validator's findings up to `retries` more times.
/// Timeouts are rethrown immediately.
InductionResult induce(const InductionPrompt& prompt, LlmProvider& provider, const CompletionParams& params,
                       std::size_t retries, const ValidationContext& ctx);

}  // namespace forested
