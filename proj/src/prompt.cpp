#include <sstream>

#include "forested/induction.hpp"
#include "forested/rule_dsl.hpp"

namespace forested {

namespace {
constexpr const char* kRowsBegin = "<sample_rows>";
constexpr const char* kRowsEnd = "</sample_rows>";

constexpr const char* kSystemMessage =
    "You are a data quality engineer. You design small decision trees that detect erroneous cells in "
    "tabular data and you answer with a single JSON object only.";
}  // namespace

InductionPrompt build_prompt(const DataProfile& profile, const Table& t, const std::vector<std::size_t>& rows,
                             const PromptConfig& cfg) {
  if (rows.empty()) throw std::invalid_argument("build_prompt needs at least one sample row");
  if (cfg.min_depth > cfg.max_depth) throw std::invalid_argument("min_depth exceeds max_depth");

  InductionPrompt p;
  p.rows = rows;

  nlohmann::ordered_json sample = nlohmann::ordered_json::array();
  for (auto i : rows) {
    if (i >= t.n_rows()) throw std::out_of_range("sample row " + std::to_string(i) + " out of range");
    nlohmann::ordered_json values;
    for (std::size_t j = 0; j < t.n_cols(); ++j) values[t.attribute_name(j)] = t.cell(i, j);
    sample.push_back({{"row_id", i}, {"values", std::move(values)}});
  }
  std::ostringstream ctx;
  ctx << "Data profile (JSON):\n" << profile_to_json(profile).dump(1) << "\n\n"
      << "Sample rows (JSON; row_id is the 0-based index in the full table):\n"
      << kRowsBegin << "\n" << sample.dump(1) << "\n" << kRowsEnd << "\n";
  p.data_context = ctx.str();

  std::ostringstream spec;
  spec << "The decision tree should be shallow (" << cfg.min_depth << "-" << cfg.max_depth
       << " levels, counting the leaf level). Each node should be specialized, not overloaded with unrelated "
          "checks. There should be at least one gnn node whose children are not leaf nodes.\n"
          "Node types:\n"
          "- rule: a boolean expression in the rule language below, evaluated for one cell "
          "(true = the check fires). Each rule node handles only one type of check "
          "(e.g. numeric range, format, or cross-column consistency). Give true_child and false_child.\n"
          "- gnn: a learned relational check for patterns spanning rows or columns (functional dependencies, "
          "conditional FDs, denial constraints). No code; the name states the purpose and the attributes "
          "involved, e.g. gnn_fd_check_zip_city, gnn_cfd_check. Give true_child and false_child; the true "
          "branch means the relational check fires.\n"
          "- leaf: leaf_value true (error) or false (clean).\n\n"
       << rule_dsl_grammar() << "\n";
  p.tree_spec = spec.str();

  p.output_requirements =
      "Return one JSON object with exactly two fields:\n"
      "  \"tree_structure\": a list of NodeSpec objects {\"node_id\": string, \"type\": \"rule\"|\"gnn\"|\"leaf\", "
      "\"name\": string, \"code\": string (rule only), \"true_child\": node_id, \"false_child\": node_id, "
      "\"leaf_value\": boolean (leaf only)}. Exactly one node (the root) is never a child.\n"
      "  \"labels\": for every sample row and every column, one entry {\"row_id\": integer, \"column\": string, "
      "\"is_error\": boolean, \"path\": [{\"node\": node_id, \"branch\": 0 or 1}, ..., {\"node\": leaf_id}]} "
      "giving the full path of node_ids from the root to a leaf, with branch 1 for true and 0 for false. "
      "is_error must equal the leaf_value of the final leaf.\n"
      "Example error types: missing values, typos, pattern violations, outliers, rule violations.\n"
      "Example output:\n"
      "{\"tree_structure\": [\n"
      "  {\"node_id\": \"n0\", \"type\": \"rule\", \"name\": \"check_missing\", \"code\": \"is_null(value)\", "
      "\"true_child\": \"leaf_err\", \"false_child\": \"n1\"},\n"
      "  {\"node_id\": \"n1\", \"type\": \"gnn\", \"name\": \"gnn_fd_check_zip_city\", \"true_child\": \"n2\", "
      "\"false_child\": \"leaf_ok\"},\n"
      "  {\"node_id\": \"n2\", \"type\": \"rule\", \"name\": \"check_fd_columns\", "
      "\"code\": \"in_set(attr, {\\\"zip\\\", \\\"city\\\"})\", \"true_child\": \"leaf_err2\", \"false_child\": \"leaf_ok2\"},\n"
      "  {\"node_id\": \"leaf_err\", \"type\": \"leaf\", \"name\": \"leaf_error\", \"leaf_value\": true}, ...],\n"
      " \"labels\": [{\"row_id\": 3, \"column\": \"city\", \"is_error\": false, \"path\": [{\"node\": \"n0\", "
      "\"branch\": 0}, {\"node\": \"n1\", \"branch\": 0}, {\"node\": \"leaf_ok\"}]}, ...]}\n";
  return p;
}

std::string InductionPrompt::render() const {
  return "1. Data context\n" + data_context + "\n2. Decision tree specification\n" + tree_spec +
         "\n3. Output requirements\n" + output_requirements;
}

std::vector<ChatMessage> prompt_messages(const InductionPrompt& prompt) {
  return {{"system", kSystemMessage}, {"user", prompt.render()}};
}

std::vector<std::size_t> sample_rows_from_prompt(const std::string& rendered) {
  const auto b = rendered.find(kRowsBegin);
  const auto e = rendered.find(kRowsEnd);
  if (b == std::string::npos || e == std::string::npos || e < b) {
    throw std::invalid_argument("prompt has no sample row block");
  }
  const auto start = b + std::string_view(kRowsBegin).size();
  const auto rows = nlohmann::json::parse(rendered.substr(start, e - start));
  std::vector<std::size_t> out;
  for (const auto& r : rows) out.push_back(r.at("row_id").get<std::size_t>());
  return out;
}

}  // namespace forested
