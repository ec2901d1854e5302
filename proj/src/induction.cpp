#include "forested/induction.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "forested/hashing.hpp"
#include "forested/rule_dsl.hpp"

namespace forested {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(NodeType t) {
  switch (t) {
    case NodeType::rule: return "rule";
    case NodeType::gnn: return "gnn";
    case NodeType::leaf: return "leaf";
  }
  return "leaf";
}

ordered_json node_spec_to_json(const NodeSpec& n) {
  ordered_json j;
  j["node_id"] = n.node_id;
  j["type"] = to_string(n.type);
  j["name"] = n.name;
  if (n.code) j["code"] = *n.code;
  if (n.true_child) j["true_child"] = *n.true_child;
  if (n.false_child) j["false_child"] = *n.false_child;
  if (n.leaf_value) j["leaf_value"] = *n.leaf_value;
  return j;
}

ordered_json tree_structure_to_json(const std::vector<NodeSpec>& nodes) {
  ordered_json arr = ordered_json::array();
  for (const auto& n : nodes) arr.push_back(node_spec_to_json(n));
  return arr;
}

ordered_json induction_output_to_json(const InductionOutput& out) {
  ordered_json labels = ordered_json::array();
  for (const auto& l : out.labels) {
    ordered_json path = ordered_json::array();
    for (const auto& s : l.path) {
      ordered_json step;
      step["node"] = s.node_id;
      if (s.branch) step["branch"] = *s.branch;
      path.push_back(std::move(step));
    }
    labels.push_back({{"row_id", l.row_id}, {"column", l.column}, {"is_error", l.is_error}, {"path", path}});
  }
  ordered_json j;
  j["tree_structure"] = tree_structure_to_json(out.tree_structure);
  j["labels"] = std::move(labels);
  return j;
}

std::string ValidationReport::summary() const {
  std::ostringstream ss;
  for (const auto& v : violations) ss << "- " << v.code << ": " << v.message << "\n";
  return ss.str();
}

ValidationError::ValidationError(std::vector<Violation> violations)
    : std::runtime_error([&] {
        std::string msg = "invalid induction output:";
        for (const auto& v : violations) msg += " " + v.code;
        return msg;
      }()),
      violations_(std::move(violations)) {}

namespace {

std::optional<std::string> id_of(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return std::nullopt;
}

std::optional<bool> flag_of(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) {
    auto x = v.get<long long>();
    if (x == 0 || x == 1) return x == 1;
  }
  if (v.is_string()) {
    auto s = v.get<std::string>();
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
  }
  return std::nullopt;
}

std::optional<int> branch_of(const json& v) {
  auto f = flag_of(v);
  if (!f) return std::nullopt;
  return *f ? 1 : 0;
}

std::optional<PathStep> step_of(const json& v) {
  if (auto id = id_of(v)) return PathStep{*id, std::nullopt};
  if (v.is_array() && !v.empty()) {
    auto id = id_of(v[0]);
    if (!id) return std::nullopt;
    PathStep s{*id, std::nullopt};
    if (v.size() > 1 && !v[1].is_null()) {
      s.branch = branch_of(v[1]);
      if (!s.branch) return std::nullopt;
    }
    return s;
  }
  if (v.is_object()) {
    std::optional<std::string> id;
    for (const char* key : {"node", "node_id", "id"}) {
      if (v.contains(key)) {
        id = id_of(v[key]);
        break;
      }
    }
    if (!id) return std::nullopt;
    PathStep s{*id, std::nullopt};
    if (v.contains("branch") && !v["branch"].is_null()) {
      s.branch = branch_of(v["branch"]);
      if (!s.branch) return std::nullopt;
    }
    return s;
  }
  return std::nullopt;
}

std::string extract_json_object(const std::string& raw) {
  const auto first = raw.find('{');
  const auto last = raw.rfind('}');
  if (first == std::string::npos || last == std::string::npos || last < first) return raw;
  return raw.substr(first, last - first + 1);
}

struct Checker {
  const ValidationContext& ctx;
  std::vector<Violation> violations;

  void add(std::string code, std::string message) { violations.push_back({std::move(code), std::move(message)}); }
};

}  // namespace

std::size_t tree_depth(const std::vector<NodeSpec>& nodes) {
  std::map<std::string, const NodeSpec*> by_id;
  std::set<std::string> referenced;
  for (const auto& n : nodes) {
    by_id[n.node_id] = &n;
    if (n.true_child) referenced.insert(*n.true_child);
    if (n.false_child) referenced.insert(*n.false_child);
  }
  const NodeSpec* root = nullptr;
  for (const auto& n : nodes) {
    if (!referenced.count(n.node_id)) {
      root = &n;
      break;
    }
  }
  if (!root) return 0;
  std::function<std::size_t(const NodeSpec&, std::size_t)> walk = [&](const NodeSpec& n, std::size_t guard) -> std::size_t {
    if (n.type == NodeType::leaf || guard > nodes.size()) return 1;
    std::size_t best = 0;
    for (const auto& c : {n.true_child, n.false_child}) {
      if (c && by_id.count(*c)) best = std::max(best, walk(*by_id[*c], guard + 1));
    }
    return 1 + best;
  };
  return walk(*root, 0);
}

ValidationReport check_output(const std::string& raw, const ValidationContext& ctx) {
  ValidationReport report;
  Checker c{ctx, {}};

  json doc;
  try {
    doc = json::parse(extract_json_object(raw));
  } catch (const json::exception& e) {
    c.add("invalid_json", e.what());
    report.violations = std::move(c.violations);
    return report;
  }
  if (!doc.is_object() || !doc.contains("tree_structure") || !doc["tree_structure"].is_array()) {
    c.add("missing_field", "top-level object must contain a \"tree_structure\" array");
  }
  if (!doc.is_object() || !doc.contains("labels") || !doc["labels"].is_array()) {
    c.add("missing_field", "top-level object must contain a \"labels\" array");
  }
  if (!c.violations.empty()) {
    report.violations = std::move(c.violations);
    return report;
  }

  InductionOutput out;
  for (std::size_t k = 0; k < doc["tree_structure"].size(); ++k) {
    const json& v = doc["tree_structure"][k];
    const std::string where = "tree_structure[" + std::to_string(k) + "]";
    if (!v.is_object() || !v.contains("node_id") || !id_of(v["node_id"])) {
      c.add("malformed_node", where + " needs a string node_id");
      continue;
    }
    NodeSpec n;
    n.node_id = *id_of(v["node_id"]);
    const std::string type = v.value("type", std::string());
    if (type == "rule") {
      n.type = NodeType::rule;
    } else if (type == "gnn") {
      n.type = NodeType::gnn;
    } else if (type == "leaf") {
      n.type = NodeType::leaf;
    } else {
      c.add("unknown_node_type", "node " + n.node_id + " has type \"" + type + "\"; expected rule, gnn or leaf");
      continue;
    }
    n.name = v.contains("name") && v["name"].is_string() ? v["name"].get<std::string>() : n.node_id;
    if (v.contains("code") && v["code"].is_string()) n.code = v["code"].get<std::string>();
    if (v.contains("true_child") && !v["true_child"].is_null()) n.true_child = id_of(v["true_child"]);
    if (v.contains("false_child") && !v["false_child"].is_null()) n.false_child = id_of(v["false_child"]);
    if (v.contains("leaf_value") && !v["leaf_value"].is_null()) {
      n.leaf_value = flag_of(v["leaf_value"]);
      if (!n.leaf_value) c.add("invalid_leaf_value", "node " + n.node_id + " leaf_value must be true or false");
    }
    out.tree_structure.push_back(std::move(n));
  }

  std::map<std::string, const NodeSpec*> by_id;
  bool structure_ok = c.violations.empty();
  for (const auto& n : out.tree_structure) {
    if (!by_id.emplace(n.node_id, &n).second) {
      c.add("duplicate_node_id", "node_id " + n.node_id + " is used more than once");
      structure_ok = false;
    }
  }
  std::map<std::string, std::size_t> in_degree;
  for (const auto& n : out.tree_structure) {
    if (n.type == NodeType::leaf) {
      if (!n.leaf_value) c.add("leaf_missing_value", "leaf " + n.node_id + " has no leaf_value");
      if (n.true_child || n.false_child) {
        c.add("leaf_has_children", "leaf " + n.node_id + " must not have children");
        structure_ok = false;
      }
      continue;
    }
    if (n.leaf_value) c.add("unexpected_leaf_value", "non-leaf node " + n.node_id + " carries a leaf_value");
    for (const auto* child : {&n.true_child, &n.false_child}) {
      const char* which = child == &n.true_child ? "true_child" : "false_child";
      if (!*child) {
        c.add("missing_child", "node " + n.node_id + " has no " + which);
        structure_ok = false;
      } else if (!by_id.count(**child)) {
        c.add("unknown_child", "node " + n.node_id + " " + which + " refers to unknown node " + **child);
        structure_ok = false;
      } else {
        ++in_degree[**child];
      }
    }
    if (n.type == NodeType::rule) {
      if (!n.code || n.code->empty()) {
        c.add("rule_missing_code", "rule node " + n.node_id + " has no code");
        continue;
      }
      try {
        const auto expr = RuleExpr::parse(*n.code);
        if (!ctx.columns.empty()) {
          for (const auto& f : expr.referenced_fields()) {
            if (std::find(ctx.columns.begin(), ctx.columns.end(), f) == ctx.columns.end()) {
              c.add("unknown_field", "rule node " + n.node_id + " reads unknown attribute \"" + f + "\"");
            }
          }
        }
      } catch (const RuleParseError& e) {
        c.add("rule_parse_error", "rule node " + n.node_id + ": " + e.what() + " (at offset " +
                                      std::to_string(e.offset()) + ")");
      }
    }
  }

  const NodeSpec* root = nullptr;
  if (structure_ok) {
    std::vector<const NodeSpec*> roots;
    for (const auto& n : out.tree_structure) {
      if (!in_degree.count(n.node_id)) roots.push_back(&n);
    }
    bool shared_child = false;
    for (const auto& [id, deg] : in_degree) {
      if (deg > 1) {
        c.add("not_a_tree", "node " + id + " has " + std::to_string(deg) + " parents");
        shared_child = true;
      }
    }
    // Cycle and reachability check from every root candidate.
    std::set<std::string> reached;
    bool cycle = false;
    std::function<void(const NodeSpec&, std::set<std::string>&)> visit = [&](const NodeSpec& n, std::set<std::string>& stack) {
      if (stack.count(n.node_id)) {
        cycle = true;
        return;
      }
      if (!reached.insert(n.node_id).second) return;
      stack.insert(n.node_id);
      for (const auto& ch : {n.true_child, n.false_child}) {
        if (ch) visit(*by_id.at(*ch), stack);
      }
      stack.erase(n.node_id);
    };
    for (const auto* r : roots) {
      std::set<std::string> stack;
      visit(*r, stack);
    }
    if (reached.size() != out.tree_structure.size()) {
      // Whatever was not reached from a root sits on a cycle.
      for (const auto& n : out.tree_structure) {
        if (!reached.count(n.node_id)) {
          std::set<std::string> stack;
          visit(n, stack);
        }
      }
      cycle = true;
    }
    if (cycle) c.add("not_a_tree", "the node graph contains a cycle");
    if (roots.empty()) {
      c.add("no_root", "every node is referenced as a child; there is no root");
    } else if (roots.size() > 1) {
      std::string ids;
      for (const auto* r : roots) ids += (ids.empty() ? "" : ", ") + r->node_id;
      c.add("multiple_roots", "expected exactly one root, found: " + ids);
    }
    if (out.tree_structure.empty()) c.add("empty_tree", "tree_structure is empty");
    if (roots.size() == 1 && !cycle && !shared_child) root = roots.front();
  }

  if (root) {
    const std::size_t depth = tree_depth(out.tree_structure);
    if (depth < ctx.min_depth || depth > ctx.max_depth) {
      c.add("depth_out_of_bounds", "tree depth " + std::to_string(depth) + " outside [" +
                                       std::to_string(ctx.min_depth) + ", " + std::to_string(ctx.max_depth) + "]");
    }
  }
  std::size_t gnn_count = 0;
  bool gnn_with_inner_child = false;
  for (const auto& n : out.tree_structure) {
    if (n.type != NodeType::gnn) continue;
    ++gnn_count;
    for (const auto& ch : {n.true_child, n.false_child}) {
      if (ch && by_id.count(*ch) && by_id.at(*ch)->type != NodeType::leaf) gnn_with_inner_child = true;
    }
  }
  if (gnn_count == 0) {
    c.add("no_gnn_node", "the tree needs at least one gnn node");
  } else if (!gnn_with_inner_child) {
    c.add("gnn_children_are_leaves", "at least one gnn node must have a child that is not a leaf");
  }

  // Labels.
  std::set<std::pair<std::size_t, std::string>> seen_cells;
  const std::set<std::size_t> sampled(ctx.sampled_rows.begin(), ctx.sampled_rows.end());
  for (std::size_t k = 0; k < doc["labels"].size(); ++k) {
    const json& v = doc["labels"][k];
    const std::string where = "labels[" + std::to_string(k) + "]";
    if (!v.is_object() || !v.contains("row_id") || !v["row_id"].is_number_integer() || v["row_id"].get<long long>() < 0) {
      c.add("label_malformed", where + " needs a non-negative integer row_id");
      continue;
    }
    LabelSpec l;
    l.row_id = v["row_id"].get<std::size_t>();
    const char* column_key = v.contains("column") ? "column" : "column_name";
    if (!v.contains(column_key) || !v[column_key].is_string()) {
      c.add("label_malformed", where + " needs a column name");
      continue;
    }
    l.column = v[column_key].get<std::string>();
    auto err = v.contains("is_error") ? flag_of(v["is_error"]) : std::nullopt;
    if (!err) {
      c.add("label_malformed", where + " needs a boolean is_error");
      continue;
    }
    l.is_error = *err;
    if (!v.contains("path") || !v["path"].is_array() || v["path"].empty()) {
      c.add("label_malformed", where + " needs a non-empty path");
      continue;
    }
    bool steps_ok = true;
    for (const auto& s : v["path"]) {
      auto step = step_of(s);
      if (!step) {
        steps_ok = false;
        break;
      }
      l.path.push_back(*step);
    }
    if (!steps_ok) {
      c.add("label_malformed", where + " has a path entry that is not a node id or {node, branch}");
      continue;
    }
    if (!ctx.columns.empty() && std::find(ctx.columns.begin(), ctx.columns.end(), l.column) == ctx.columns.end()) {
      c.add("unknown_column", where + " names unknown column \"" + l.column + "\"");
    }
    if (!sampled.empty() && !sampled.count(l.row_id)) {
      c.add("unexpected_label_row", where + " labels row " + std::to_string(l.row_id) + " which was not sampled");
    }
    if (!seen_cells.insert({l.row_id, l.column}).second) {
      c.add("duplicate_label", "cell (" + std::to_string(l.row_id) + ", " + l.column + ") is labelled more than once");
    }

    if (root) {
      // Replay the path against the tree, filling in implied branches.
      const NodeSpec* cur = root;
      std::string problem;
      for (std::size_t s = 0; s < l.path.size(); ++s) {
        auto& step = l.path[s];
        if (!cur) {
          problem = "continues past a leaf";
          break;
        }
        if (step.node_id != cur->node_id) {
          problem = "step " + std::to_string(s) + " is " + step.node_id + " but the tree is at " + cur->node_id;
          break;
        }
        if (cur->type == NodeType::leaf) {
          step.branch.reset();
          if (s + 1 != l.path.size()) {
            problem = "continues past leaf " + cur->node_id;
            break;
          }
          if (cur->leaf_value && *cur->leaf_value != l.is_error) {
            c.add("label_leaf_mismatch", where + " has is_error=" + (l.is_error ? "true" : "false") +
                                             " but its path ends at leaf " + cur->node_id);
          }
          cur = nullptr;
          break;
        }
        if (!step.branch) {
          if (s + 1 < l.path.size()) {
            const auto& next = l.path[s + 1].node_id;
            if (cur->true_child && next == *cur->true_child) step.branch = 1;
            else if (cur->false_child && next == *cur->false_child) step.branch = 0;
          }
          if (!step.branch) {
            problem = "no branch recorded at " + cur->node_id;
            break;
          }
        }
        const auto& child = *step.branch ? cur->true_child : cur->false_child;
        cur = by_id.at(*child);
      }
      if (problem.empty() && cur) problem = "ends at " + cur->node_id + " instead of a leaf";
      if (!problem.empty()) c.add("label_path_invalid", where + " path " + problem);
    }
    out.labels.push_back(std::move(l));
  }
  if (!sampled.empty() && !ctx.columns.empty()) {
    std::size_t missing = 0;
    std::string first;
    for (auto r : ctx.sampled_rows) {
      for (const auto& col : ctx.columns) {
        if (!seen_cells.count({r, col})) {
          if (missing == 0) first = "(" + std::to_string(r) + ", " + col + ")";
          ++missing;
        }
      }
    }
    if (missing) {
      c.add("missing_label", std::to_string(missing) + " sampled cell(s) have no label, e.g. " + first);
    }
  }

  report.violations = std::move(c.violations);
  if (report.violations.empty()) report.output = std::move(out);
  return report;
}

InductionOutput validate_output(const std::string& raw, const ValidationContext& ctx) {
  auto report = check_output(raw, ctx);
  if (!report.ok()) throw ValidationError(std::move(report.violations));
  return std::move(*report.output);
}

InductionFailure::InductionFailure(std::vector<ValidationReport> attempts)
    : std::runtime_error("induction failed after " + std::to_string(attempts.size()) + " attempt(s)"),
      attempts_(std::move(attempts)) {}

std::string prompt_key(const std::vector<ChatMessage>& messages) {
  ordered_json arr = ordered_json::array();
  for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return sha256_hex(arr.dump());
}

FixtureProvider::FixtureProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string FixtureProvider::complete(const std::vector<ChatMessage>& messages, const CompletionParams&) {
  const auto path = dir_ / (prompt_key(messages) + ".json");
  if (!std::filesystem::exists(path)) {
    throw ProviderError("no mock fixture " + path.filename().string() + " in " + dir_.string());
  }
  const json j = json::parse(read_file(path));
  if (j.is_object() && j.value("timeout", false)) throw ProviderTimeout("fixture scripted a timeout");
  // A fixture holds either the response text itself or {"response": "..."}.
  if (j.is_object() && j.contains("response") && j["response"].is_string()) return j["response"].get<std::string>();
  return j.dump();
}

std::string ScriptedProvider::complete(const std::vector<ChatMessage>& messages, const CompletionParams&) {
  std::lock_guard<std::mutex> lock(mu_);
  history_.push_back(messages);
  Step step;
  if (!steps_.empty()) {
    step = steps_.front();
    steps_.pop_front();
    last_ = step;
  } else if (repeat_last_ && last_) {
    step = *last_;
  } else {
    throw ProviderError("scripted provider has no more responses");
  }
  if (step.timeout) throw ProviderTimeout("scripted timeout");
  return step.text;
}

std::size_t ScriptedProvider::calls() const {
  std::lock_guard<std::mutex> lock(mu_);
  return history_.size();
}

std::vector<std::vector<ChatMessage>> ScriptedProvider::history() const {
  std::lock_guard<std::mutex> lock(mu_);
  return history_;
}

InductionResult induce(const InductionPrompt& prompt, LlmProvider& provider, const CompletionParams& params,
                       std::size_t retries, const ValidationContext& ctx) {
  std::vector<ChatMessage> messages = prompt_messages(prompt);
  std::vector<ValidationReport> reports;
  for (std::size_t attempt = 0; attempt <= retries; ++attempt) {
    std::string raw;
    try {
      raw = provider.complete(messages, params);
    } catch (const ProviderTimeout&) {
      throw;
    } catch (const ProviderError& e) {
      ValidationReport r;
      r.violations.push_back({"provider_error", e.what()});
      reports.push_back(std::move(r));
      continue;
    }
    ValidationReport r = check_output(raw, ctx);
    if (r.ok()) return {std::move(*r.output), std::move(raw), attempt + 1};
    messages.push_back({"assistant", raw});
    messages.push_back({"user", "The JSON you returned is invalid:\n" + r.summary() +
                                    "Return the complete corrected JSON object with \"tree_structure\" and "
                                    "\"labels\", and nothing else."});
    reports.push_back(std::move(r));
  }
  throw InductionFailure(std::move(reports));
}

}  // namespace forested
