#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "forested/evalkit.hpp"
#include "forested/induction.hpp"
#include "forested/table.hpp"

namespace forested {

/// Offline stand-in for an LLM. It knows the clean table, writes rule checks from the clean
/// column domains, routes FD-violating cells through a GnnNode, and labels the sampled rows of
/// the prompt by walking its own tree over the dirty table.
class TeacherProvider : public LlmProvider {
 public:
  TeacherProvider(Table dirty, Table clean, std::vector<FunctionalDependency> fds);

  std::string complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;

  std::vector<NodeSpec> tree() const { return nodes_; }
  InductionOutput induce_for(const std::vector<std::size_t>& rows) const;

 private:
  bool fd_violation(std::size_t i, std::size_t j) const;

  Table dirty_;
  Table clean_;
  std::vector<FunctionalDependency> fds_;
  std::vector<NodeSpec> nodes_;
};

/// Check expression the teacher writes for one column, or "" when it has none.
std::string column_check(const Table& clean, std::size_t j);

/// Quotes text as a rule-DSL string literal.
std::string dsl_quote(const std::string& s);

/// Forwards to another provider and stores each response as `<prompt-sha256>.json` in `dir`.
class RecordingProvider : public LlmProvider {
 public:
  RecordingProvider(LlmProvider& inner, std::filesystem::path dir);
  std::string complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) override;

 private:
  LlmProvider& inner_;
  std::filesystem::path dir_;
};

}  // namespace forested
