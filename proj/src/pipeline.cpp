#include "forested/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

#include "forested/hashing.hpp"
#include "forested/rng.hpp"
#include "forested/teacher.hpp"

namespace forested {

namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key " + where + key + " has the wrong type");
  }
}

void reject_unknown(const nlohmann::json& obj, const std::vector<std::string>& known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config section " + (where.empty() ? std::string("root") : where) + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key " + where + k);
  }
}

std::string status_name(TreeStatus s) { return to_string(s); }

std::string tree_dir_name(std::size_t r) {
  std::string s = std::to_string(r);
  while (s.size() < 2) s = "0" + s;
  return "tree_" + s;
}

ordered_json training_to_json(const std::vector<GnnTrainingSummary>& training) {
  ordered_json arr = ordered_json::array();
  for (const auto& s : training) {
    ordered_json e;
    e["node_id"] = s.node_id;
    e["mode"] = to_string(s.mode);
    e["n_labels"] = s.n_labels;
    e["n_positive"] = s.n_positive;
    if (!s.loss_trace.empty()) {
      e["initial_loss"] = s.loss_trace.front();
      e["final_loss"] = s.loss_trace.back();
    }
    e["loss_trace"] = s.loss_trace;
    arr.push_back(std::move(e));
  }
  return arr;
}

}  // namespace

std::string to_string(TreeStatus s) {
  switch (s) {
    case TreeStatus::ok: return "ok";
    case TreeStatus::timeout: return "timeout";
    case TreeStatus::failed: return "failed";
  }
  return "failed";
}

RunConfig config_from_json(const nlohmann::json& j, RunConfig cfg) {
  reject_unknown(j, {"rho", "sample_cap", "partition_size", "max_trees", "depth", "pca_dim", "gnn", "em", "provider",
                     "seed", "ablation", "workers"},
                 "");
  read_key(j, "rho", cfg.rho, "");
  read_key(j, "sample_cap", cfg.sample_cap, "");
  read_key(j, "partition_size", cfg.partition_size, "");
  read_key(j, "max_trees", cfg.max_trees, "");
  read_key(j, "pca_dim", cfg.pca_dim, "");
  read_key(j, "seed", cfg.seed, "");
  read_key(j, "workers", cfg.workers, "");
  if (j.contains("depth")) {
    const auto& d = j["depth"];
    reject_unknown(d, {"min", "max"}, "depth.");
    read_key(d, "min", cfg.min_depth, "depth.");
    read_key(d, "max", cfg.max_depth, "depth.");
  }
  if (j.contains("gnn")) {
    const auto& g = j["gnn"];
    reject_unknown(g, {"epochs", "learning_rate", "hidden_dim"}, "gnn.");
    read_key(g, "epochs", cfg.gnn.epochs, "gnn.");
    read_key(g, "learning_rate", cfg.gnn.learning_rate, "gnn.");
    read_key(g, "hidden_dim", cfg.gnn.hidden_dim, "gnn.");
  }
  if (j.contains("em")) {
    const auto& e = j["em"];
    reject_unknown(e, {"max_iters", "tol"}, "em.");
    read_key(e, "max_iters", cfg.em.max_iters, "em.");
    read_key(e, "tol", cfg.em.tol, "em.");
  }
  if (j.contains("provider")) {
    const auto& p = j["provider"];
    reject_unknown(p, {"kind", "base_url", "model", "mock_dir", "record_dir", "temperature", "timeout_seconds", "retries",
                       "max_in_flight", "teacher_clean", "teacher_fds"},
                   "provider.");
    read_key(p, "kind", cfg.provider.kind, "provider.");
    read_key(p, "base_url", cfg.provider.base_url, "provider.");
    read_key(p, "model", cfg.provider.model, "provider.");
    read_key(p, "mock_dir", cfg.provider.mock_dir, "provider.");
    read_key(p, "record_dir", cfg.provider.record_dir, "provider.");
    read_key(p, "temperature", cfg.provider.temperature, "provider.");
    read_key(p, "timeout_seconds", cfg.provider.timeout_seconds, "provider.");
    read_key(p, "retries", cfg.provider.retries, "provider.");
    read_key(p, "max_in_flight", cfg.provider.max_in_flight, "provider.");
    read_key(p, "teacher_clean", cfg.provider.teacher_clean, "provider.");
    read_key(p, "teacher_fds", cfg.provider.teacher_fds, "provider.");
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    reject_unknown(a, {"disable_gnn_nodes", "disable_ensemble"}, "ablation.");
    read_key(a, "disable_gnn_nodes", cfg.disable_gnn_nodes, "ablation.");
    read_key(a, "disable_ensemble", cfg.disable_ensemble, "ablation.");
  }
  validate_config(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, std::move(base));
}

void validate_config(const RunConfig& cfg) {
  if (!(cfg.rho > 0.0 && cfg.rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
  if (cfg.sample_cap == 0) throw ConfigError("sample_cap must be positive");
  if (cfg.partition_size == 0) throw ConfigError("partition_size must be positive");
  if (cfg.max_trees == 0) throw ConfigError("max_trees must be positive");
  if (cfg.min_depth < 2 || cfg.min_depth > cfg.max_depth) throw ConfigError("depth bounds must satisfy 2 <= min <= max");
  if (cfg.gnn.epochs == 0 || !(cfg.gnn.learning_rate > 0) || cfg.gnn.hidden_dim == 0) throw ConfigError("invalid gnn settings");
  if (cfg.em.max_iters == 0 || !(cfg.em.tol > 0)) throw ConfigError("invalid em settings");
  if (cfg.workers == 0) throw ConfigError("workers must be positive");
  const auto& p = cfg.provider;
  if (p.mock_dir.empty() && p.kind != "http" && p.kind != "fixture" && p.kind != "teacher") {
    throw ConfigError("unknown provider kind " + p.kind);
  }
  if (p.mock_dir.empty() && p.kind == "fixture") throw ConfigError("fixture provider needs provider.mock_dir");
  if (p.mock_dir.empty() && p.kind == "teacher" && p.teacher_clean.empty()) {
    throw ConfigError("teacher provider needs provider.teacher_clean");
  }
  if (!(p.timeout_seconds > 0)) throw ConfigError("provider.timeout_seconds must be positive");
}

ordered_json config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["rho"] = cfg.rho;
  j["sample_cap"] = cfg.sample_cap;
  j["partition_size"] = cfg.partition_size;
  j["max_trees"] = cfg.max_trees;
  j["depth"] = {{"min", cfg.min_depth}, {"max", cfg.max_depth}};
  j["pca_dim"] = cfg.pca_dim;
  j["gnn"] = {{"epochs", cfg.gnn.epochs}, {"learning_rate", cfg.gnn.learning_rate}, {"hidden_dim", cfg.gnn.hidden_dim}};
  j["em"] = {{"max_iters", cfg.em.max_iters}, {"tol", cfg.em.tol}};
  ordered_json p;
  p["kind"] = cfg.provider.mock_dir.empty() ? cfg.provider.kind : "fixture";
  p["base_url"] = cfg.provider.base_url;
  p["model"] = cfg.provider.model;
  p["mock_dir"] = cfg.provider.mock_dir;
  p["temperature"] = cfg.provider.temperature;
  p["timeout_seconds"] = cfg.provider.timeout_seconds;
  p["retries"] = cfg.provider.retries;
  p["teacher_clean"] = cfg.provider.teacher_clean;
  p["teacher_fds"] = cfg.provider.teacher_fds;
  j["provider"] = std::move(p);
  j["seed"] = cfg.seed;
  j["ablation"] = {{"disable_gnn_nodes", cfg.disable_gnn_nodes}, {"disable_ensemble", cfg.disable_ensemble}};
  return j;
}

SamplerConfig sampler_config(const RunConfig& cfg) {
  SamplerConfig sc;
  sc.rho = cfg.rho;
  sc.cap = cfg.sample_cap;
  sc.pca_dim = cfg.pca_dim;
  sc.seed = cfg.seed;
  return sc;
}

std::unique_ptr<LlmProvider> make_provider(const RunConfig& cfg, const Table& dirty) {
  const auto& p = cfg.provider;
  if (!p.mock_dir.empty() || p.kind == "fixture") {
    if (!std::filesystem::is_directory(p.mock_dir)) throw ConfigError("mock_dir " + p.mock_dir + " is not a directory");
    return std::make_unique<FixtureProvider>(p.mock_dir);
  }
  if (p.kind == "teacher") {
    Table clean;
    try {
      clean = load_table(p.teacher_clean);
    } catch (const IoError& e) {
      throw ConfigError(std::string("teacher_clean: ") + e.what());
    }
    std::vector<FunctionalDependency> fds;
    try {
      for (const auto& f : p.teacher_fds) fds.push_back(parse_fd(f));
    } catch (const SpecError& e) {
      throw ConfigError(e.what());
    }
    return std::make_unique<TeacherProvider>(dirty, std::move(clean), std::move(fds));
  }
  const char* key = std::getenv(kApiKeyVariable);
  if (key == nullptr || *key == '\0') {
    throw ConfigError(std::string(kApiKeyVariable) + " is not set and no provider.mock_dir is configured");
  }
  try {
    return std::make_unique<HttpProvider>(p.base_url, key, p.max_in_flight);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

TreeOutcome run_tree(const RunConfig& cfg, const Table& dirty, const DataProfile& profile, const BipartiteGraph& graph,
                     std::vector<std::size_t> rows, std::size_t index, LlmProvider& provider) {
  TreeOutcome out;
  out.index = index;
  out.rows = std::move(rows);

  const auto prompt = build_prompt(profile, dirty, out.rows, PromptConfig{cfg.min_depth, cfg.max_depth});
  out.prompt = prompt.render();

  ValidationContext ctx;
  ctx.min_depth = cfg.min_depth;
  ctx.max_depth = cfg.max_depth;
  for (const auto& a : dirty.attributes()) ctx.columns.push_back(a.name);
  ctx.sampled_rows = out.rows;

  CompletionParams params;
  params.model = cfg.provider.model;
  params.temperature = cfg.provider.temperature;
  params.timeout = std::chrono::milliseconds(static_cast<long long>(cfg.provider.timeout_seconds * 1000.0));

  try {
    auto induced = induce(prompt, provider, params, cfg.provider.retries, ctx);
    out.raw = std::move(induced.raw);
    out.attempts = induced.attempts;
    out.output = std::move(induced.output);
  } catch (const ProviderTimeout& e) {
    out.status = TreeStatus::timeout;
    out.message = e.what();
    return out;
  } catch (const InductionFailure& e) {
    out.status = TreeStatus::failed;
    out.message = e.what();
    out.failed_attempts = e.attempts();
    out.attempts = e.attempts().size();
    return out;
  } catch (const ProviderError& e) {
    out.status = TreeStatus::failed;
    out.message = e.what();
    return out;
  }

  try {
    DecisionTree tree = build_skeleton(*out.output);
    tree.edge_buckets = graph.edge_dim() - 1;
    if (cfg.disable_gnn_nodes) {
      disable_gnn_nodes(tree);
      for (auto k : tree.gnn_nodes()) out.training.push_back({tree.node(k).id, GnnMode::disabled, 0, 0, {}});
    } else {
      const auto labels = prepare_labels(tree, *out.output, dirty);
      TrainConfig tc = cfg.gnn;
      tc.seed = derive_seed(cfg.seed, 1000 + index);
      out.training = train_gnn_nodes(tree, labels, dirty, tc);
    }
    out.prediction = predict(tree, dirty, &graph);
    out.tree = std::move(tree);
    out.status = TreeStatus::ok;
  } catch (const std::exception& e) {
    out.status = TreeStatus::failed;
    out.message = std::string("tree could not be built or trained: ") + e.what();
    out.tree.reset();
    out.prediction.reset();
  }
  return out;
}

namespace {

RunResult run(const RunConfig& cfg, const Table& dirty, LlmProvider& provider, const Table* clean, bool forest) {
  validate_config(cfg);
  if (clean && (clean->n_rows() != dirty.n_rows() || clean->n_cols() != dirty.n_cols())) {
    throw ShapeError("clean and dirty tables differ in shape");
  }
  RunResult r;
  r.forest = forest;
  r.profile = profile(dirty);

  r.sample = partition(select_uncertain(dirty, sampler_config(cfg)), cfg.partition_size);

  std::size_t n_trees = std::min(cfg.max_trees, r.sample.partitions.size());
  if (!forest || cfg.disable_ensemble) n_trees = std::min<std::size_t>(1, n_trees);

  const auto graph = build_bipartite_graph(dirty, kDefaultEdgeBuckets, 0);
  r.trees.resize(n_trees);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < n_trees; k = next++) {
      r.trees[k] = run_tree(cfg, dirty, r.profile, graph, r.sample.partitions[k], k, provider);
    }
  };
  const std::size_t n_workers = std::min(cfg.workers, std::max<std::size_t>(1, n_trees));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<ErrorMatrix> preds;
  std::size_t timeouts = 0;
  for (const auto& t : r.trees) {
    if (t.status == TreeStatus::ok) {
      r.used_trees.push_back(t.index);
      preds.push_back(t.prediction->matrix);
      if (t.tree->degraded() && !cfg.disable_gnn_nodes) {
        r.warnings.push_back("tree " + std::to_string(t.index) + " is degraded: a GnnNode routes without a trained model");
      }
    } else {
      if (t.status == TreeStatus::timeout) ++timeouts;
      r.warnings.push_back("tree " + std::to_string(t.index) + " dropped (" + to_string(t.status) + "): " + t.message);
    }
  }
  if (preds.empty()) {
    if (n_trees > 0 && timeouts == n_trees) throw RunFailure("every induction call timed out", 4);
    throw RunFailure("no tree could be induced", 3);
  }

  if (forest && !cfg.disable_ensemble) {
    r.consensus = run_em(preds, cfg.em);
    r.prediction = r.consensus->consensus;
  } else {
    r.prediction = preds.front();
    r.prediction.set_kind(forest ? MatrixKind::consensus : MatrixKind::tree_prediction);
  }
  if (clean) {
    const auto truth = diff_error_matrix(dirty, *clean);
    r.metrics = metrics(r.prediction, truth);
    for (const auto& p : preds) r.per_tree_metrics.push_back(metrics(p, truth));
  }
  return r;
}

}  // namespace

RunResult run_treeed(const RunConfig& cfg, const Table& dirty, LlmProvider& provider, const Table* clean) {
  return run(cfg, dirty, provider, clean, false);
}

RunResult run_forested(const RunConfig& cfg, const Table& dirty, LlmProvider& provider, const Table* clean) {
  return run(cfg, dirty, provider, clean, true);
}

void write_run(const RunResult& r, const RunConfig& cfg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<std::pair<std::string, std::string>> files;  // relative path, contents
  auto add = [&](const std::string& rel, std::string contents) { files.emplace_back(rel, std::move(contents)); };
  auto add_json = [&](const std::string& rel, const ordered_json& j) { add(rel, j.dump(2) + "\n"); };

  const auto config = config_to_json(cfg);
  add_json("config.json", config);
  add_json("profile.json", profile_to_json(r.profile));
  add_json("sample.json", sample_to_json(r.sample));

  ordered_json trees = ordered_json::array();
  for (const auto& t : r.trees) {
    const std::string base = "trees/" + tree_dir_name(t.index) + "/";
    add(base + "prompt.txt", t.prompt);
    ordered_json summary;
    summary["tree"] = t.index;
    summary["status"] = status_name(t.status);
    summary["rows"] = t.rows;
    summary["attempts"] = t.attempts;
    if (!t.message.empty()) summary["message"] = t.message;
    if (!t.failed_attempts.empty()) {
      ordered_json attempts = ordered_json::array();
      for (const auto& a : t.failed_attempts) {
        ordered_json v = ordered_json::array();
        for (const auto& x : a.violations) v.push_back({{"code", x.code}, {"message", x.message}});
        attempts.push_back(std::move(v));
      }
      summary["failed_attempts"] = std::move(attempts);
    }
    if (t.status == TreeStatus::ok) {
      add(base + "response.txt", t.raw);
      add_json(base + "induction.json", induction_output_to_json(*t.output));
      add_json(base + "tree.json", tree_to_json(*t.tree));
      add_json(base + "training.json", training_to_json(t.training));
      add(base + "predictions.csv", matrix_to_csv(t.prediction->matrix));
      add(base + "paths.jsonl", t.prediction->paths.to_jsonl());
      summary["depth"] = t.tree->depth();
      summary["degraded"] = t.tree->degraded();
      summary["predicted_errors"] = t.prediction->matrix.count_ones();
      const auto& rep = t.prediction->report;
      summary["rule_failures"] = rep.rule_failures;
      ordered_json by_node = ordered_json::object();
      for (const auto& [node, n] : rep.failures_by_node) by_node[node] = n;
      summary["rule_failures_by_node"] = std::move(by_node);
      ordered_json examples = ordered_json::array();
      for (const auto& f : rep.examples) {
        examples.push_back({{"row", f.row}, {"column", f.col}, {"node", f.node_id}, {"message", f.message}});
      }
      summary["rule_failure_examples"] = std::move(examples);
    }
    add_json(base + "report.json", summary);
    trees.push_back(std::move(summary));
  }

  add(r.forest ? "consensus.csv" : "predictions.csv", matrix_to_csv(r.prediction));
  if (r.consensus) {
    add_json("consensus.json", consensus_to_json(r.consensus->state));
    if (r.used_trees.size() >= 3 && r.per_tree_metrics.size() == r.used_trees.size()) {
      const auto rep = reliability_report(r.consensus->state, r.per_tree_metrics);
      add_json("reliability.json", rep.to_json());
      add("reliability.csv", rep.to_csv());
    }
  }
  if (r.metrics) {
    ordered_json m = metrics_to_json(*r.metrics);
    ordered_json per_tree = ordered_json::array();
    for (std::size_t k = 0; k < r.per_tree_metrics.size(); ++k) {
      auto e = metrics_to_json(r.per_tree_metrics[k]);
      e["tree"] = r.used_trees[k];
      per_tree.push_back(std::move(e));
    }
    m["per_tree"] = std::move(per_tree);
    add_json("metrics.json", m);
  }
  ordered_json report;
  report["mode"] = r.forest ? "forested" : "treeed";
  report["trees"] = std::move(trees);
  report["used_trees"] = r.used_trees;
  report["warnings"] = r.warnings;
  report["predicted_errors"] = r.prediction.count_ones();
  add_json("report.json", report);

  try {
    fs::create_directories(dir);
    ordered_json listing = ordered_json::array();
    for (const auto& [rel, contents] : files) {
      const auto path = dir / rel;
      fs::create_directories(path.parent_path());
      write_file(path, contents);
      listing.push_back({{"path", rel}, {"sha256", sha256_hex(contents)}});
    }
    ordered_json manifest;
    manifest["tool"] = "forested";
    manifest["version"] = kVersion;
    manifest["mode"] = r.forest ? "forested" : "treeed";
    manifest["seed"] = cfg.seed;
    manifest["config_sha256"] = sha256_hex(config.dump());
    manifest["files"] = std::move(listing);
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const fs::filesystem_error& e) {
    throw IoError(e.what());
  }
}

}  // namespace forested
