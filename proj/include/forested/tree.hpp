#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "forested/gnn.hpp"
#include "forested/induction.hpp"
#include "forested/rule_dsl.hpp"
#include "forested/table.hpp"

namespace forested {

class InvariantError : public std::logic_error {
  using std::logic_error::logic_error;
};

class LabelPathError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class LookupError : public std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// How a GnnNode routes cells.
enum class GnnMode {
  trained,       // thresholded model probability
  untrained,     // no labels reached the node: always the false branch
  single_class,  // all labels agree: always that branch
  disabled,      // ablation: always the false branch
};

std::string to_string(GnnMode m);

struct TreeNode {
  std::string id;
  NodeType type = NodeType::leaf;
  std::string name;
  std::optional<RuleExpr> rule;
  std::size_t true_child = 0;
  std::size_t false_child = 0;
  bool leaf_value = false;

  GnnMode gnn_mode = GnnMode::untrained;
  int constant_branch = 0;
  std::optional<GnnParams> model;
};

class DecisionTree {
 public:
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::vector<TreeNode>& nodes() { return nodes_; }
  const TreeNode& node(std::size_t k) const { return nodes_.at(k); }
  const TreeNode& root() const { return nodes_.at(root_); }
  std::size_t root_index() const { return root_; }
  std::size_t depth() const { return depth_; }
  /// Returns nodes().size() for unknown ids.
  std::size_t index_of(const std::string& id) const;

  std::vector<std::size_t> gnn_nodes() const;
  /// True when some GnnNode does not route with a trained model.
  bool degraded() const;

  std::size_t edge_buckets = kDefaultEdgeBuckets;
  std::uint64_t edge_seed = 0;
  double threshold = 0.5;

 private:
  friend DecisionTree build_skeleton(const std::vector<NodeSpec>& nodes);
  std::vector<TreeNode> nodes_;
  std::map<std::string, std::size_t> index_;
  std::size_t root_ = 0;
  std::size_t depth_ = 0;
};

/// Compiles validated node specs. Inconsistencies raise InvariantError.
DecisionTree build_skeleton(const std::vector<NodeSpec>& nodes);
inline DecisionTree build_skeleton(const InductionOutput& out) { return build_skeleton(out.tree_structure); }

struct GnnLabelSet {
  std::map<std::string, std::vector<CellLabel>> labels;  // GnnNode id -> supervision
  std::vector<std::string> untrained;                      // GnnNodes no path visited
};

/// For each labelled path and each GnnNode on it, the branch taken becomes the cell's label.
GnnLabelSet prepare_labels(const DecisionTree& tree, const InductionOutput& out, const Table& t);

struct GnnTrainingSummary {
  std::string node_id;
  GnnMode mode = GnnMode::untrained;
  std::size_t n_labels = 0;
  std::size_t n_positive = 0;
  std::vector<double> loss_trace;
};

/// Builds the table graph once and trains every GnnNode that has two-class supervision.
std::vector<GnnTrainingSummary> train_gnn_nodes(DecisionTree& tree, const GnnLabelSet& labels, const Table& t,
                                                const TrainConfig& cfg);

/// Routes every GnnNode to its false branch (ablation without relational checks).
void disable_gnn_nodes(DecisionTree& tree);

struct DecisionPath {
  std::vector<PathStep> steps;  // internal nodes with branch, then the leaf without one
  bool leaf_value = false;

  bool operator==(const DecisionPath&) const = default;
};

class PathStore {
 public:
  PathStore() = default;
  PathStore(std::size_t rows, std::size_t cols, std::vector<std::string> column_names);

  void put(std::size_t i, std::size_t j, DecisionPath path);
  const DecisionPath& get(std::size_t i, std::size_t j) const;
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const std::vector<std::string>& column_names() const { return columns_; }

  /// One JSON object per line: {"row", "column", "path": [{"node", "branch"}], "label"}.
  std::string to_jsonl() const;
  static PathStore from_jsonl(const std::string& text);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::string> columns_;
  std::vector<std::optional<DecisionPath>> paths_;
};

struct RuleFailure {
  std::size_t row = 0;
  std::size_t col = 0;
  std::string node_id;
  std::string message;
};

struct PredictReport {
  std::size_t rule_failures = 0;
  /// The first failures, capped for the run report.
  std::vector<RuleFailure> examples;
  std::map<std::string, std::size_t> failures_by_node;
};

struct Prediction {
  ErrorMatrix matrix;
  PathStore paths;
  PredictReport report;
};

/// Walks every cell from the root to a leaf. `graph` may be null; it is then built from `t`.
Prediction predict(const DecisionTree& tree, const Table& t, const BipartiteGraph* graph = nullptr);

/// Re-walks a stored path through the tree and returns the leaf value it reaches.
/// Throws InvariantError if a step does not follow the tree's edges.
bool replay_path(const DecisionTree& tree, const DecisionPath& path);

/// "name=branch -> ... -> leaf_name (error|clean)".
std::string explain(const DecisionTree& tree, const PathStore& store, std::size_t i, std::size_t j);
std::vector<std::string> explain_steps(const DecisionTree& tree, const DecisionPath& path);

/// Tree structure JSON (same NodeSpec schema as induction output) plus per-GnnNode mode and model.
nlohmann::ordered_json tree_to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const nlohmann::json& j);

}  // namespace forested
