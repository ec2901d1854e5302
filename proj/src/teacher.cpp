#include "forested/teacher.hpp"

#include <algorithm>
#include <set>

#include "forested/hashing.hpp"
#include "forested/profiler.hpp"
#include "forested/rule_dsl.hpp"
#include "forested/values.hpp"

namespace forested {

namespace {

constexpr std::size_t kMaxShapes = 4;

std::string regex_escape(char c) {
  static const std::string special = "\\^$.|?*+()[]{}";
  if (special.find(c) != std::string::npos) return std::string("\\") + c;
  return std::string(1, c);
}

/// Character-class skeleton of a value, e.g. "205-555-1234" -> ^\d+-\d+-\d+$.
std::string shape_regex(const std::string& v) {
  std::string out = "^";
  std::string last;
  for (char c : v) {
    std::string cls;
    const auto u = static_cast<unsigned char>(c);
    if (std::isdigit(u)) cls = "\\d";
    else if (std::isalpha(u) || u >= 0x80) cls = "[^\\d\\s]";
    else if (c == ' ') cls = " ";
    else cls = regex_escape(c);
    if (cls == last && (cls == "\\d" || cls == "[^\\d\\s]")) {
      if (out.back() != '+') out += "+";
      continue;
    }
    out += cls;
    last = cls;
  }
  return out + "$";
}

std::string join_or(const std::vector<std::string>& parts) {
  if (parts.empty()) return "false";
  std::string s;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k) s += " or ";
    s += "(" + parts[k] + ")";
  }
  return s;
}

NodeSpec rule(std::string id, std::string code, std::string t, std::string f) {
  NodeSpec n;
  n.node_id = id;
  n.name = std::move(id);
  n.type = NodeType::rule;
  n.code = std::move(code);
  n.true_child = std::move(t);
  n.false_child = std::move(f);
  return n;
}

NodeSpec leaf(std::string id, bool value) {
  NodeSpec n;
  n.node_id = id;
  n.name = std::move(id);
  n.type = NodeType::leaf;
  n.leaf_value = value;
  return n;
}

}  // namespace

std::string dsl_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

std::string column_check(const Table& clean, std::size_t j) {
  const auto col = clean.column(j);
  std::vector<std::string> present;
  for (const auto& v : col) {
    if (!v.empty()) present.push_back(v);
  }
  if (present.empty()) return "";
  const std::string head = "attr == " + dsl_quote(clean.attribute_name(j)) + " and ";
  const auto type = infer_data_type(col);

  if (type == DataType::numeric) {
    double lo = 0, hi = 0;
    bool first = true;
    bool integral = true;
    for (const auto& v : present) {
      const auto x = parse_decimal(v);
      if (!x) continue;
      lo = first ? *x : std::min(lo, *x);
      hi = first ? *x : std::max(hi, *x);
      first = false;
      if (v.find_first_of(".eE") != std::string::npos) integral = false;
    }
    const std::string pattern = integral ? "^-?\\d+$" : "^-?\\d+(\\.\\d+)?$";
    return head + "violates(matches(value, \"" + pattern + "\") and to_number(value) >= " + format_number(lo) +
           " and to_number(value) <= " + format_number(hi) + ")";
  }
  if (type == DataType::categorical) {
    std::set<std::string> domain(present.begin(), present.end());
    std::string set = "{";
    bool first = true;
    for (const auto& v : domain) {
      if (!first) set += ", ";
      set += dsl_quote(v);
      first = false;
    }
    return head + "not in_set(value, " + set + "})";
  }
  std::set<std::string> shapes;
  for (const auto& v : present) shapes.insert(shape_regex(v));
  if (shapes.size() > kMaxShapes) return "";
  std::vector<std::string> parts;
  for (const auto& s : shapes) parts.push_back("matches(value, " + dsl_quote(s) + ")");
  return head + "not (" + join_or(parts) + ")";
}

TeacherProvider::TeacherProvider(Table dirty, Table clean, std::vector<FunctionalDependency> fds)
    : dirty_(std::move(dirty)), clean_(std::move(clean)), fds_(std::move(fds)) {
  if (dirty_.n_rows() != clean_.n_rows() || dirty_.n_cols() != clean_.n_cols()) {
    throw ShapeError("teacher needs dirty and clean tables of the same shape");
  }
  std::vector<std::string> format_checks, domain_checks;
  for (std::size_t j = 0; j < clean_.n_cols(); ++j) {
    const auto check = column_check(clean_, j);
    if (check.empty()) continue;
    (check.find("in_set") != std::string::npos ? domain_checks : format_checks).push_back(check);
  }
  std::set<std::string> targets;
  for (const auto& fd : fds_) targets.insert(fd.rhs);
  std::string target_set = "{";
  for (const auto& t : targets) target_set += (target_set.size() > 1 ? ", " : "") + dsl_quote(t);
  target_set += "}";
  const std::string gnn_name = fds_.empty() ? "gnn_fd_check" : "gnn_fd_" + fds_.front().rhs;

  NodeSpec gnn;
  gnn.node_id = gnn_name;
  gnn.name = gnn_name;
  gnn.type = NodeType::gnn;
  gnn.true_child = "check_fd_target";
  gnn.false_child = "check_format";

  std::vector<std::string> all_checks = format_checks;
  all_checks.insert(all_checks.end(), domain_checks.begin(), domain_checks.end());

  nodes_ = {
      rule("check_missing", "is_null(value)", "leaf_missing", gnn_name),
      gnn,
      rule("check_fd_target", targets.empty() ? "false" : "in_set(attr, " + target_set + ")", "leaf_fd_error",
           "check_other_attributes"),
      rule("check_other_attributes", join_or(all_checks), "leaf_error_2", "leaf_clean_2"),
      rule("check_format", join_or(format_checks), "leaf_format_error", "check_canonical_categories"),
      rule("check_canonical_categories", join_or(domain_checks), "leaf_error", "leaf_clean"),
      leaf("leaf_missing", true),
      leaf("leaf_fd_error", true),
      leaf("leaf_error_2", true),
      leaf("leaf_clean_2", false),
      leaf("leaf_format_error", true),
      leaf("leaf_error", true),
      leaf("leaf_clean", false),
  };
}

bool TeacherProvider::fd_violation(std::size_t i, std::size_t j) const {
  const auto is_rhs = std::any_of(fds_.begin(), fds_.end(),
                                  [&](const FunctionalDependency& fd) { return fd.rhs == clean_.attribute_name(j); });
  if (!is_rhs) return false;
  const auto& d = dirty_.cell(i, j);
  if (d.empty() || d == clean_.cell(i, j)) return false;
  for (std::size_t k = 0; k < clean_.n_rows(); ++k) {
    if (clean_.cell(k, j) == d) return true;
  }
  return false;
}

InductionOutput TeacherProvider::induce_for(const std::vector<std::size_t>& rows) const {
  std::map<std::string, const NodeSpec*> by_id;
  std::map<std::string, RuleExpr> rules;
  for (const auto& n : nodes_) {
    by_id[n.node_id] = &n;
    if (n.code) rules.emplace(n.node_id, RuleExpr::parse(*n.code));
  }
  InductionOutput out;
  out.tree_structure = nodes_;
  for (auto i : rows) {
    if (i >= dirty_.n_rows()) throw ProviderError("prompt names row " + std::to_string(i) + " outside the table");
    for (std::size_t j = 0; j < dirty_.n_cols(); ++j) {
      const bool fd = fd_violation(i, j);
      LabelSpec label;
      label.row_id = i;
      label.column = dirty_.attribute_name(j);
      const NodeSpec* cur = &nodes_.front();
      while (cur->type != NodeType::leaf) {
        bool b = false;
        if (cur->type == NodeType::gnn) {
          b = fd;
        } else {
          try {
            b = rules.at(cur->node_id).evaluate(dirty_, i, j);
          } catch (const RuleEvalError&) {
            b = false;
          }
        }
        label.path.push_back({cur->node_id, b ? 1 : 0});
        cur = by_id.at(b ? *cur->true_child : *cur->false_child);
      }
      label.path.push_back({cur->node_id, std::nullopt});
      label.is_error = *cur->leaf_value;
      out.labels.push_back(std::move(label));
    }
  }
  return out;
}

std::string TeacherProvider::complete(const std::vector<ChatMessage>& messages, const CompletionParams&) {
  for (const auto& m : messages) {
    if (m.role == "user" && m.content.find("<sample_rows>") != std::string::npos) {
      return induction_output_to_json(induce_for(sample_rows_from_prompt(m.content))).dump(2);
    }
  }
  throw ProviderError("teacher found no sample rows in the prompt");
}

RecordingProvider::RecordingProvider(LlmProvider& inner, std::filesystem::path dir)
    : inner_(inner), dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string RecordingProvider::complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) {
  const auto text = inner_.complete(messages, params);
  nlohmann::ordered_json j;
  j["response"] = text;
  write_file(dir_ / (prompt_key(messages) + ".json"), j.dump(2) + "\n");
  return text;
}

}  // namespace forested
