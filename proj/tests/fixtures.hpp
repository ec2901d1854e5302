#pragma once

#include <map>
#include <string>
#include <vector>

#include "forested/induction.hpp"
#include "forested/rule_dsl.hpp"
#include "forested/table.hpp"

namespace fixture {

inline forested::NodeSpec rule(std::string id, std::string code, std::string t, std::string f) {
  forested::NodeSpec n;
  n.node_id = id;
  n.name = std::move(id);
  n.type = forested::NodeType::rule;
  n.code = std::move(code);
  n.true_child = std::move(t);
  n.false_child = std::move(f);
  return n;
}

inline forested::NodeSpec gnn(std::string id, std::string t, std::string f) {
  forested::NodeSpec n;
  n.node_id = id;
  n.name = std::move(id);
  n.type = forested::NodeType::gnn;
  n.true_child = std::move(t);
  n.false_child = std::move(f);
  return n;
}

inline forested::NodeSpec leaf(std::string id, bool value) {
  forested::NodeSpec n;
  n.node_id = id;
  n.name = std::move(id);
  n.type = forested::NodeType::leaf;
  n.leaf_value = value;
  return n;
}

/// The Hospital tree from the case study: a phone rule at the root, then the provider identity
/// GnnNode, a spacing rule and the canonical city spellings.
inline std::vector<forested::NodeSpec> hospital_tree() {
  return {
      rule("check_phone_format", "attr == \"PhoneNumber\" and not matches(value, \"^[0-9]{10}$\")",
           "leaf_phone_error", "gnn_fd_provider_identity"),
      gnn("gnn_fd_provider_identity", "leaf_fd_error", "check_measurement_spacing"),
      rule("check_measurement_spacing", "value != trim(value) or contains(value, \"  \")", "leaf_spacing_error",
           "check_canonical_categories"),
      rule("check_canonical_categories",
           "attr == \"City\" and not in_set(lower(value), {\"birmingham\", \"huntsville\", \"montgomery\", \"dothan\"})",
           "leaf_error", "leaf_clean"),
      leaf("leaf_phone_error", true),
      leaf("leaf_fd_error", true),
      leaf("leaf_spacing_error", true),
      leaf("leaf_error", true),
      leaf("leaf_clean", false),
  };
}

/// Hospital rows; row 3 carries the misspelt city.
inline forested::Table hospital_rows() {
  return forested::Table({"ProviderNumber", "HospitalName", "City", "State", "PhoneNumber"},
                         {{"10001", "southeast alabama medical center", "dothan", "al", "3347938701"},
                          {"10005", "marshall medical center south", "huntsville", "al", "2565938310"},
                          {"10006", "eliza coffee memorial hospital", "montgomery", "al", "2567688400"},
                          {"10011", "st vincents east", "birminxham", "al", "2058383122"},
                          {"10012", "dekalb regional medical center", "birmingham", "al", "2568453150"},
                          {"10016", "shelby baptist medical center", "birmingham", "al", "2056208100"}});
}

/// Labels for `rows` obtained by walking `nodes` over `t`; every GnnNode takes `gnn_branch`.
inline forested::InductionOutput walk_labels(const std::vector<forested::NodeSpec>& nodes, const forested::Table& t,
                                             const std::vector<std::size_t>& rows, int gnn_branch = 0) {
  std::map<std::string, const forested::NodeSpec*> by_id;
  std::map<std::string, forested::RuleExpr> rules;
  for (const auto& n : nodes) {
    by_id[n.node_id] = &n;
    if (n.code) rules.emplace(n.node_id, forested::RuleExpr::parse(*n.code));
  }
  forested::InductionOutput out;
  out.tree_structure = nodes;
  for (auto i : rows) {
    for (std::size_t j = 0; j < t.n_cols(); ++j) {
      forested::LabelSpec l;
      l.row_id = i;
      l.column = t.attribute_name(j);
      const forested::NodeSpec* cur = &nodes.front();
      while (cur->type != forested::NodeType::leaf) {
        const int b = cur->type == forested::NodeType::gnn ? gnn_branch : rules.at(cur->node_id).evaluate(t, i, j);
        l.path.push_back({cur->node_id, b});
        cur = by_id.at(b ? *cur->true_child : *cur->false_child);
      }
      l.path.push_back({cur->node_id, std::nullopt});
      l.is_error = *cur->leaf_value;
      out.labels.push_back(std::move(l));
    }
  }
  return out;
}

}  // namespace fixture
