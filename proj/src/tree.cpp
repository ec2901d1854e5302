#include "forested/tree.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "forested/rng.hpp"

namespace forested {

namespace {
constexpr std::size_t kMaxReportedFailures = 100;
}

std::string to_string(GnnMode m) {
  switch (m) {
    case GnnMode::trained: return "trained";
    case GnnMode::untrained: return "untrained";
    case GnnMode::single_class: return "single_class";
    case GnnMode::disabled: return "disabled";
  }
  return "untrained";
}

std::size_t DecisionTree::index_of(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nodes_.size() : it->second;
}

std::vector<std::size_t> DecisionTree::gnn_nodes() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (nodes_[k].type == NodeType::gnn) out.push_back(k);
  }
  return out;
}

bool DecisionTree::degraded() const {
  return std::any_of(nodes_.begin(), nodes_.end(), [](const TreeNode& n) {
    return n.type == NodeType::gnn && n.gnn_mode != GnnMode::trained;
  });
}

DecisionTree build_skeleton(const std::vector<NodeSpec>& specs) {
  DecisionTree tree;
  if (specs.empty()) throw InvariantError("empty tree structure");
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (!tree.index_.emplace(specs[k].node_id, k).second) {
      throw InvariantError("duplicate node id " + specs[k].node_id);
    }
  }
  std::vector<std::size_t> in_degree(specs.size(), 0);
  for (const auto& s : specs) {
    TreeNode n;
    n.id = s.node_id;
    n.type = s.type;
    n.name = s.name.empty() ? s.node_id : s.name;
    if (s.type == NodeType::leaf) {
      if (!s.leaf_value) throw InvariantError("leaf " + s.node_id + " has no value");
      n.leaf_value = *s.leaf_value;
    } else {
      if (!s.true_child || !s.false_child) throw InvariantError("node " + s.node_id + " lacks a child");
      n.true_child = tree.index_of(*s.true_child);
      n.false_child = tree.index_of(*s.false_child);
      if (n.true_child == specs.size() || n.false_child == specs.size()) {
        throw InvariantError("node " + s.node_id + " refers to a missing child");
      }
      ++in_degree[n.true_child];
      ++in_degree[n.false_child];
      if (s.type == NodeType::rule) {
        if (!s.code) throw InvariantError("rule " + s.node_id + " has no code");
        try {
          n.rule = RuleExpr::parse(*s.code);
        } catch (const RuleParseError& e) {
          throw InvariantError("rule " + s.node_id + " does not parse: " + e.what());
        }
      }
    }
    tree.nodes_.push_back(std::move(n));
  }
  std::size_t roots = 0;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (in_degree[k] > 1) throw InvariantError("node " + specs[k].node_id + " has several parents");
    if (in_degree[k] == 0) {
      tree.root_ = k;
      ++roots;
    }
  }
  if (roots != 1) throw InvariantError("tree needs exactly one root, found " + std::to_string(roots));

  std::vector<int> state(specs.size(), 0);
  std::size_t visited = 0;
  std::function<std::size_t(std::size_t)> depth = [&](std::size_t k) -> std::size_t {
    if (state[k] == 1) throw InvariantError("cycle through node " + specs[k].node_id);
    state[k] = 1;
    ++visited;
    const auto& n = tree.nodes_[k];
    std::size_t d = 1;
    if (n.type != NodeType::leaf) d += std::max(depth(n.true_child), depth(n.false_child));
    state[k] = 2;
    return d;
  };
  tree.depth_ = depth(tree.root_);
  if (visited != specs.size()) throw InvariantError("tree has nodes unreachable from the root");
  return tree;
}

GnnLabelSet prepare_labels(const DecisionTree& tree, const InductionOutput& out, const Table& t) {
  GnnLabelSet set;
  for (auto k : tree.gnn_nodes()) set.labels[tree.node(k).id];
  for (const auto& label : out.labels) {
    const std::size_t j = t.attribute_index(label.column);
    if (j >= t.n_cols()) throw LabelPathError("label names unknown column " + label.column);
    if (label.row_id >= t.n_rows()) throw LabelPathError("label row " + std::to_string(label.row_id) + " out of range");
    std::size_t cur = tree.root_index();
    for (std::size_t s = 0; s < label.path.size(); ++s) {
      const auto& step = label.path[s];
      const std::string where = "label (" + std::to_string(label.row_id) + ", " + label.column + ") step " +
                                std::to_string(s) + " (" + step.node_id + ")";
      if (cur >= tree.nodes().size()) throw LabelPathError(where + ": path continues past a leaf");
      const TreeNode& node = tree.node(cur);
      if (node.id != step.node_id) throw LabelPathError(where + ": expected node " + node.id);
      if (node.type == NodeType::leaf) {
        cur = tree.nodes().size();
        continue;
      }
      if (!step.branch) throw LabelPathError(where + ": no branch recorded");
      if (node.type == NodeType::gnn) {
        set.labels[node.id].push_back({label.row_id, j, *step.branch});
      }
      cur = *step.branch ? node.true_child : node.false_child;
    }
    if (cur < tree.nodes().size()) {
      throw LabelPathError("label (" + std::to_string(label.row_id) + ", " + label.column + ") path stops at " +
                           tree.node(cur).id + " before reaching a leaf");
    }
  }
  for (const auto& [id, labels] : set.labels) {
    if (labels.empty()) set.untrained.push_back(id);
  }
  return set;
}

std::vector<GnnTrainingSummary> train_gnn_nodes(DecisionTree& tree, const GnnLabelSet& labels, const Table& t,
                                                const TrainConfig& cfg) {
  std::vector<GnnTrainingSummary> out;
  std::optional<BipartiteGraph> graph;
  for (auto k : tree.gnn_nodes()) {
    TreeNode& node = tree.nodes()[k];
    GnnTrainingSummary s;
    s.node_id = node.id;
    auto it = labels.labels.find(node.id);
    const std::vector<CellLabel> empty;
    const auto& ls = it == labels.labels.end() ? empty : it->second;
    s.n_labels = ls.size();
    s.n_positive = static_cast<std::size_t>(std::count_if(ls.begin(), ls.end(), [](const CellLabel& l) { return l.label == 1; }));
    node.model.reset();
    if (ls.empty()) {
      node.gnn_mode = GnnMode::untrained;
      node.constant_branch = 0;
    } else if (s.n_positive == 0 || s.n_positive == ls.size()) {
      node.gnn_mode = GnnMode::single_class;
      node.constant_branch = s.n_positive ? 1 : 0;
    } else {
      if (!graph) graph = build_bipartite_graph(t, tree.edge_buckets, tree.edge_seed);
      TrainConfig node_cfg = cfg;
      node_cfg.seed = derive_seed(cfg.seed, k);
      auto result = train(*graph, ls, node_cfg);
      node.model = std::move(result.params);
      node.gnn_mode = GnnMode::trained;
      s.loss_trace = std::move(result.loss_trace);
    }
    s.mode = node.gnn_mode;
    out.push_back(std::move(s));
  }
  return out;
}

void disable_gnn_nodes(DecisionTree& tree) {
  for (auto k : tree.gnn_nodes()) {
    auto& n = tree.nodes()[k];
    n.gnn_mode = GnnMode::disabled;
    n.constant_branch = 0;
    n.model.reset();
  }
}

PathStore::PathStore(std::size_t rows, std::size_t cols, std::vector<std::string> column_names)
    : rows_(rows), cols_(cols), columns_(std::move(column_names)), paths_(rows * cols) {}

void PathStore::put(std::size_t i, std::size_t j, DecisionPath path) {
  if (i >= rows_ || j >= cols_) throw LookupError("cell outside the path store");
  paths_[i * cols_ + j] = std::move(path);
}

const DecisionPath& PathStore::get(std::size_t i, std::size_t j) const {
  if (i >= rows_ || j >= cols_ || !paths_[i * cols_ + j]) {
    throw LookupError("no decision path for cell (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  }
  return *paths_[i * cols_ + j];
}

std::string PathStore::to_jsonl() const {
  std::string out;
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) {
      const auto& p = paths_[i * cols_ + j];
      if (!p) continue;
      nlohmann::ordered_json steps = nlohmann::ordered_json::array();
      for (const auto& s : p->steps) {
        nlohmann::ordered_json step;
        step["node"] = s.node_id;
        step["branch"] = s.branch ? nlohmann::ordered_json(*s.branch) : nlohmann::ordered_json(nullptr);
        steps.push_back(std::move(step));
      }
      nlohmann::ordered_json line;
      line["row"] = i;
      line["column"] = columns_[j];
      line["path"] = std::move(steps);
      line["label"] = p->leaf_value ? 1 : 0;
      out += line.dump();
      out.push_back('\n');
    }
  }
  return out;
}

PathStore PathStore::from_jsonl(const std::string& text) {
  struct Entry {
    std::size_t row;
    std::string column;
    DecisionPath path;
  };
  std::vector<Entry> entries;
  std::vector<std::string> columns;
  std::size_t rows = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Entry e;
    e.row = j.at("row").get<std::size_t>();
    e.column = j.at("column").get<std::string>();
    for (const auto& s : j.at("path")) {
      PathStep step{s.at("node").get<std::string>(), std::nullopt};
      if (!s.at("branch").is_null()) step.branch = s.at("branch").get<int>();
      e.path.steps.push_back(std::move(step));
    }
    e.path.leaf_value = j.at("label").get<int>() != 0;
    if (std::find(columns.begin(), columns.end(), e.column) == columns.end()) columns.push_back(e.column);
    rows = std::max(rows, e.row + 1);
    entries.push_back(std::move(e));
  }
  PathStore store(rows, columns.size(), columns);
  for (auto& e : entries) {
    const auto j = static_cast<std::size_t>(std::find(columns.begin(), columns.end(), e.column) - columns.begin());
    store.put(e.row, j, std::move(e.path));
  }
  return store;
}

Prediction predict(const DecisionTree& tree, const Table& t, const BipartiteGraph* graph) {
  const std::size_t n = t.n_rows();
  const std::size_t m = t.n_cols();
  std::vector<std::string> names;
  for (const auto& a : t.attributes()) names.push_back(a.name);

  // Model probabilities per trained GnnNode, computed once over the whole table.
  std::map<std::size_t, Eigen::MatrixXd> probabilities;
  std::optional<BipartiteGraph> owned;
  for (auto k : tree.gnn_nodes()) {
    const auto& node = tree.node(k);
    if (node.gnn_mode != GnnMode::trained) continue;
    if (!node.model) throw InvariantError("GnnNode " + node.id + " is marked trained but has no model");
    if (!graph) {
      owned = build_bipartite_graph(t, tree.edge_buckets, tree.edge_seed);
      graph = &*owned;
    }
    probabilities[k] = forward(*graph, *node.model).probabilities;
  }

  Prediction out{ErrorMatrix(n, m, MatrixKind::tree_prediction, names), PathStore(n, m, names), {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      DecisionPath path;
      std::size_t cur = tree.root_index();
      for (std::size_t guard = 0; guard <= tree.nodes().size(); ++guard) {
        const TreeNode& node = tree.node(cur);
        if (node.type == NodeType::leaf) {
          path.steps.push_back({node.id, std::nullopt});
          path.leaf_value = node.leaf_value;
          break;
        }
        int branch = 0;
        if (node.type == NodeType::rule) {
          try {
            branch = node.rule->evaluate(t, i, j) ? 1 : 0;
          } catch (const RuleEvalError& e) {
            branch = 0;
            ++out.report.rule_failures;
            ++out.report.failures_by_node[node.id];
            if (out.report.examples.size() < kMaxReportedFailures) {
              out.report.examples.push_back({i, j, node.id, e.what()});
            }
          }
        } else if (node.gnn_mode == GnnMode::trained) {
          branch = infer_branch(probabilities.at(cur)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                                tree.threshold)
                       ? 1
                       : 0;
        } else {
          branch = node.constant_branch;
        }
        path.steps.push_back({node.id, branch});
        cur = branch ? node.true_child : node.false_child;
      }
      out.matrix.set(i, j, path.leaf_value);
      out.paths.put(i, j, std::move(path));
    }
  }
  return out;
}

bool replay_path(const DecisionTree& tree, const DecisionPath& path) {
  std::size_t cur = tree.root_index();
  for (std::size_t s = 0; s < path.steps.size(); ++s) {
    const auto& step = path.steps[s];
    const TreeNode& node = tree.node(cur);
    if (node.id != step.node_id) throw InvariantError("path step " + std::to_string(s) + " is " + step.node_id + ", tree is at " + node.id);
    if (node.type == NodeType::leaf) {
      if (s + 1 != path.steps.size()) throw InvariantError("path continues past leaf " + node.id);
      return node.leaf_value;
    }
    if (!step.branch) throw InvariantError("path step at " + node.id + " has no branch");
    cur = *step.branch ? node.true_child : node.false_child;
  }
  throw InvariantError("path ends before reaching a leaf");
}

std::vector<std::string> explain_steps(const DecisionTree& tree, const DecisionPath& path) {
  std::vector<std::string> out;
  for (const auto& s : path.steps) {
    const auto k = tree.index_of(s.node_id);
    const std::string name = k < tree.nodes().size() ? tree.node(k).name : s.node_id;
    if (s.branch) {
      out.push_back(name + "=" + std::to_string(*s.branch));
    } else {
      out.push_back(name + " (" + (path.leaf_value ? "error" : "clean") + ")");
    }
  }
  return out;
}

std::string explain(const DecisionTree& tree, const PathStore& store, std::size_t i, std::size_t j) {
  const auto steps = explain_steps(tree, store.get(i, j));
  std::string out;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (k) out += " -> ";
    out += steps[k];
  }
  return out;
}

nlohmann::ordered_json tree_to_json(const DecisionTree& tree) {
  nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
  for (const auto& n : tree.nodes()) {
    NodeSpec s;
    s.node_id = n.id;
    s.type = n.type;
    s.name = n.name;
    if (n.type == NodeType::leaf) {
      s.leaf_value = n.leaf_value;
    } else {
      s.true_child = tree.node(n.true_child).id;
      s.false_child = tree.node(n.false_child).id;
    }
    if (n.rule) s.code = n.rule->source();
    auto j = node_spec_to_json(s);
    if (n.type == NodeType::gnn) {
      j["mode"] = to_string(n.gnn_mode);
      j["constant_branch"] = n.constant_branch;
      if (n.model) j["model"] = params_to_json(*n.model);
    }
    nodes.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["tree_structure"] = std::move(nodes);
  out["depth"] = tree.depth();
  out["edge_buckets"] = tree.edge_buckets;
  out["edge_seed"] = tree.edge_seed;
  out["threshold"] = tree.threshold;
  return out;
}

DecisionTree tree_from_json(const nlohmann::json& j) {
  const auto& arr = j.at("tree_structure");
  std::vector<NodeSpec> specs;
  for (const auto& v : arr) {
    NodeSpec s;
    s.node_id = v.at("node_id").get<std::string>();
    const auto type = v.at("type").get<std::string>();
    s.type = type == "rule" ? NodeType::rule : type == "gnn" ? NodeType::gnn : NodeType::leaf;
    s.name = v.value("name", s.node_id);
    if (v.contains("code")) s.code = v["code"].get<std::string>();
    if (v.contains("true_child")) s.true_child = v["true_child"].get<std::string>();
    if (v.contains("false_child")) s.false_child = v["false_child"].get<std::string>();
    if (v.contains("leaf_value")) s.leaf_value = v["leaf_value"].get<bool>();
    specs.push_back(std::move(s));
  }
  DecisionTree tree = build_skeleton(specs);
  tree.edge_buckets = j.value("edge_buckets", kDefaultEdgeBuckets);
  tree.edge_seed = j.value("edge_seed", std::uint64_t{0});
  tree.threshold = j.value("threshold", 0.5);
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const auto& v = arr[k];
    auto& node = tree.nodes()[k];
    if (node.type != NodeType::gnn) continue;
    const auto mode = v.value("mode", std::string("untrained"));
    node.gnn_mode = mode == "trained" ? GnnMode::trained
                    : mode == "single_class" ? GnnMode::single_class
                    : mode == "disabled" ? GnnMode::disabled
                                         : GnnMode::untrained;
    node.constant_branch = v.value("constant_branch", 0);
    if (v.contains("model")) node.model = params_from_json(v["model"]);
  }
  return tree;
}

}  // namespace forested
