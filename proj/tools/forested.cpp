#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "forested/evalkit.hpp"
#include "forested/pipeline.hpp"
#include "forested/profiler.hpp"
#include "forested/rng.hpp"
#include "forested/sampler.hpp"
#include "forested/teacher.hpp"

namespace fs = std::filesystem;
using namespace forested;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInduction = 3;
constexpr int kExitIo = 5;

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> trees;
  std::optional<double> rho;
  std::optional<std::size_t> epochs;
  std::string mock_dir;
  std::string record_dir;
  bool disable_gnn = false;
  bool disable_ensemble = false;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("-c,--config", f.config, "JSON run configuration");
  app->add_option("--seed", f.seed, "Seed for sampling and training");
  app->add_option("--workers", f.workers, "Trees processed in parallel");
  app->add_option("--trees", f.trees, "Upper bound on the number of trees");
  app->add_option("--rho", f.rho, "Sampling ratio");
  app->add_option("--epochs", f.epochs, "GNN training epochs");
  app->add_option("--mock-dir", f.mock_dir, "Replay recorded provider responses from this directory");
  app->add_option("--record-dir", f.record_dir, "Store every provider response in this directory");
  app->add_flag("--disable-gnn", f.disable_gnn, "Route every GnnNode to its false branch");
  app->add_flag("--disable-ensemble", f.disable_ensemble, "Use the first tree instead of the EM consensus");
}

RunConfig resolve(const RunFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (f.trees) cfg.max_trees = *f.trees;
  if (f.rho) cfg.rho = *f.rho;
  if (f.epochs) cfg.gnn.epochs = *f.epochs;
  if (!f.mock_dir.empty()) cfg.provider.mock_dir = f.mock_dir;
  if (!f.record_dir.empty()) cfg.provider.record_dir = f.record_dir;
  if (f.disable_gnn) cfg.disable_gnn_nodes = true;
  if (f.disable_ensemble) cfg.disable_ensemble = true;
  validate_config(cfg);
  return cfg;
}

/// Provider for `dirty`, wrapped so responses are recorded when record_dir is set.
class ProviderStack {
 public:
  ProviderStack(const RunConfig& cfg, const Table& dirty) : base_(make_provider(cfg, dirty)) {
    if (!cfg.provider.record_dir.empty()) recorder_ = std::make_unique<RecordingProvider>(*base_, cfg.provider.record_dir);
  }
  LlmProvider& get() { return recorder_ ? *recorder_ : *base_; }

 private:
  std::unique_ptr<LlmProvider> base_;
  std::unique_ptr<LlmProvider> recorder_;
};

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
}

std::vector<FunctionalDependency> parse_fds(const std::vector<std::string>& texts) {
  std::vector<FunctionalDependency> fds;
  for (const auto& t : texts) fds.push_back(parse_fd(t));
  return fds;
}

void print_summary(const RunResult& r, const fs::path& dir) {
  std::cout << "run directory: " << dir.string() << "\n";
  std::cout << "trees used: " << r.used_trees.size() << " of " << r.trees.size() << "\n";
  std::cout << "predicted errors: " << r.prediction.count_ones() << "\n";
  if (r.metrics) {
    std::cout << "precision " << r.metrics->precision << " recall " << r.metrics->recall << " f1 " << r.metrics->f1 << "\n";
  }
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
}

int run_pipeline(const RunFlags& f, const std::string& input, const std::string& clean_path, const std::string& out,
                 bool forest) {
  RunConfig cfg = resolve(f);
  const Table dirty = load_table(input);
  std::optional<Table> clean;
  if (!clean_path.empty()) clean = load_table(clean_path);
  if (cfg.provider.kind == "teacher" && cfg.provider.teacher_clean.empty() && !clean_path.empty()) {
    cfg.provider.teacher_clean = clean_path;
  }
  ProviderStack provider(cfg, dirty);
  const auto r = forest ? run_forested(cfg, dirty, provider.get(), clean ? &*clean : nullptr)
                        : run_treeed(cfg, dirty, provider.get(), clean ? &*clean : nullptr);
  write_run(r, cfg, out);
  print_summary(r, out);
  return 0;
}

int cmd_induce(const RunFlags& f, const std::string& input, std::size_t part, const std::string& out) {
  const RunConfig cfg = resolve(f);
  const Table dirty = load_table(input);
  const auto prof = profile(dirty);
  const auto sample = partition(select_uncertain(dirty, sampler_config(cfg)), cfg.partition_size);
  if (part >= sample.partitions.size()) {
    throw ConfigError("partition " + std::to_string(part) + " does not exist; the sample has " +
                      std::to_string(sample.partitions.size()));
  }
  ProviderStack provider(cfg, dirty);
  const auto graph = build_bipartite_graph(dirty);
  const auto t = run_tree(cfg, dirty, prof, graph, sample.partitions[part], part, provider.get());
  if (t.status != TreeStatus::ok) {
    std::cerr << "induction " << to_string(t.status) << ": " << t.message << "\n";
    return t.status == TreeStatus::timeout ? 4 : kExitInduction;
  }
  fs::create_directories(out);
  write_file(fs::path(out) / "prompt.txt", t.prompt);
  write_file(fs::path(out) / "response.txt", t.raw);
  write_file(fs::path(out) / "induction.json", induction_output_to_json(*t.output).dump(2) + "\n");
  write_file(fs::path(out) / "tree.json", tree_to_json(*t.tree).dump(2) + "\n");
  std::cout << "tree depth " << t.tree->depth() << ", " << t.tree->nodes().size() << " nodes, " << t.attempts << " attempt(s)\n";
  return 0;
}

int cmd_inject(const std::string& clean_path, double rate, const InjectionSpec& rates, bool per_type,
               const std::vector<std::string>& fd_texts, std::uint64_t seed, const std::string& out_dirty,
               const std::string& out_truth, const std::string& out_log) {
  const Table clean = load_table(clean_path);
  InjectionSpec spec = per_type ? rates : uniform_spec(rate, parse_fds(fd_texts), seed);
  spec.fds = parse_fds(fd_texts);
  spec.seed = seed;
  const auto res = inject_errors(clean, spec);
  write_table(res.dirty, out_dirty);
  if (!out_truth.empty()) write_matrix(res.truth, out_truth);
  if (!out_log.empty()) write_file(out_log, injection_log_to_csv(res.log));
  std::cout << "injected " << res.log.size() << " errors into " << clean.n_rows() * clean.n_cols() << " cells\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& truth_path, const std::string& dirty_path,
                 const std::string& clean_path, const std::string& out) {
  const auto pred = read_matrix(pred_path);
  ErrorMatrix truth;
  if (!truth_path.empty()) {
    truth = read_matrix(truth_path, MatrixKind::ground_truth);
  } else if (!dirty_path.empty() && !clean_path.empty()) {
    truth = diff_error_matrix(load_table(dirty_path), load_table(clean_path));
  } else {
    throw ConfigError("evaluate needs --truth or both --dirty and --clean");
  }
  emit(metrics_to_json(metrics(pred, truth)).dump(2) + "\n", out);
  return 0;
}

int cmd_sweep(const RunFlags& f, const std::string& kind, const std::vector<double>& values,
              const std::string& clean_path, const std::vector<std::string>& fd_texts, double rate,
              const std::string& out_dir) {
  const RunConfig base = resolve(f);
  const Table clean = load_table(clean_path);
  const auto fds = parse_fds(fd_texts);
  std::ostringstream csv;
  csv << "kind,value,trees_used,precision,recall,f1\n";
  for (const double v : values) {
    RunConfig cfg = base;
    double r = rate;
    if (kind == "error-rate") {
      r = v;
    } else if (kind == "trees") {
      cfg.max_trees = static_cast<std::size_t>(v);
    } else if (kind == "depth") {
      cfg.max_depth = static_cast<std::size_t>(v);
      cfg.min_depth = std::min(cfg.min_depth, cfg.max_depth);
    } else {
      throw ConfigError("unknown sweep kind " + kind + " (error-rate, trees, depth)");
    }
    validate_config(cfg);
    const auto injected = inject_errors(clean, uniform_spec(r, fds, derive_seed(cfg.seed, 31)));
    if (cfg.provider.kind == "teacher" && cfg.provider.teacher_clean.empty()) cfg.provider.teacher_clean = clean_path;
    ProviderStack provider(cfg, injected.dirty);
    std::ostringstream label;
    label << kind << "_" << v;
    try {
      const auto res = run_forested(cfg, injected.dirty, provider.get(), &clean);
      write_run(res, cfg, fs::path(out_dir) / label.str());
      csv << kind << "," << v << "," << res.used_trees.size() << "," << res.metrics->precision << ","
          << res.metrics->recall << "," << res.metrics->f1 << "\n";
    } catch (const RunFailure& e) {
      std::cerr << label.str() << ": " << e.what() << "\n";
      csv << kind << "," << v << ",0,,,\n";
    }
  }
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "sweep.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interpretable tabular error detection with LLM-induced decision trees"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string input, clean_path, out, pred_path, truth_path, log_path, kind = "error-rate";
  std::size_t part = 0;
  double rate = 0.1;
  InjectionSpec rates;
  std::uint64_t seed = 0;
  std::vector<std::string> fds;
  std::vector<double> values;
  RunFlags flags;

  auto* profile_cmd = app.add_subcommand("profile", "Print the data profile of a table");
  profile_cmd->add_option("input", input, "Table CSV")->required();
  profile_cmd->add_option("-o,--out", out, "Write JSON here instead of stdout");

  auto* sample_cmd = app.add_subcommand("sample", "Select uncertain tuples and partition them");
  sample_cmd->add_option("input", input, "Table CSV")->required();
  sample_cmd->add_option("-o,--out", out, "Write JSON here instead of stdout");
  add_run_flags(sample_cmd, flags);

  auto* induce_cmd = app.add_subcommand("induce", "Induce, train and store one tree for one partition");
  induce_cmd->add_option("input", input, "Dirty table CSV")->required();
  induce_cmd->add_option("--partition", part, "Partition index");
  induce_cmd->add_option("-o,--out", out, "Output directory")->required();
  add_run_flags(induce_cmd, flags);

  auto* detect_cmd = app.add_subcommand("detect", "Single-tree detection");
  auto* ensemble_cmd = app.add_subcommand("ensemble", "Forest detection with EM consensus");
  for (auto* c : {detect_cmd, ensemble_cmd}) {
    c->add_option("input", input, "Dirty table CSV")->required();
    c->add_option("--clean", clean_path, "Clean table CSV; enables metrics");
    c->add_option("-o,--out", out, "Run directory")->required();
    add_run_flags(c, flags);
  }

  bool per_type = false;
  auto* inject_cmd = app.add_subcommand("inject", "Inject errors into a clean table");
  inject_cmd->add_option("clean", clean_path, "Clean table CSV")->required();
  auto* rate_opt = inject_cmd->add_option("--rate", rate, "Total error rate split evenly over the error types");
  auto* mv = inject_cmd->add_option("--missing", rates.missing_value, "Missing value rate");
  auto* ty = inject_cmd->add_option("--typo", rates.typo, "Typo rate");
  auto* pv = inject_cmd->add_option("--pattern", rates.pattern_violation, "Pattern violation rate");
  auto* ol = inject_cmd->add_option("--outlier", rates.outlier, "Outlier rate");
  auto* rv = inject_cmd->add_option("--rule", rates.rule_violation, "Functional dependency violation rate");
  for (auto* o : {mv, ty, pv, ol, rv}) o->excludes(rate_opt);
  inject_cmd->add_option("--fd", fds, "Functional dependency, e.g. zip->city");
  inject_cmd->add_option("--seed", seed, "Injection seed");
  inject_cmd->add_option("-o,--out", out, "Dirty table CSV")->required();
  inject_cmd->add_option("--truth", truth_path, "Ground-truth error matrix CSV");
  inject_cmd->add_option("--log", log_path, "Injection log CSV");

  std::string dirty_path;
  auto* eval_cmd = app.add_subcommand("evaluate", "Precision, recall and F1 of a predicted error matrix");
  eval_cmd->add_option("prediction", pred_path, "Predicted error matrix CSV")->required();
  eval_cmd->add_option("--truth", truth_path, "Ground-truth error matrix CSV");
  eval_cmd->add_option("--dirty", dirty_path, "Dirty table CSV");
  eval_cmd->add_option("--clean", clean_path, "Clean table CSV");
  eval_cmd->add_option("-o,--out", out, "Write JSON here instead of stdout");

  auto* sweep_cmd = app.add_subcommand("sweep", "Repeat ensemble runs over error rates, tree counts or depth limits");
  sweep_cmd->add_option("clean", clean_path, "Clean table CSV")->required();
  sweep_cmd->add_option("--kind", kind, "error-rate, trees or depth");
  sweep_cmd->add_option("--values", values, "Values to sweep")->required();
  sweep_cmd->add_option("--rate", rate, "Error rate when the sweep varies something else");
  sweep_cmd->add_option("--fd", fds, "Functional dependency used for rule violations");
  sweep_cmd->add_option("-o,--out", out, "Output directory")->required();
  add_run_flags(sweep_cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*profile_cmd) {
      emit(profile_to_json(profile(load_table(input))).dump(2) + "\n", out);
      return 0;
    }
    if (*sample_cmd) {
      const auto cfg = resolve(flags);
      const auto s = partition(select_uncertain(load_table(input), sampler_config(cfg)), cfg.partition_size);
      emit(sample_to_json(s).dump(2) + "\n", out);
      return 0;
    }
    if (*induce_cmd) return cmd_induce(flags, input, part, out);
    if (*detect_cmd) return run_pipeline(flags, input, clean_path, out, false);
    if (*ensemble_cmd) return run_pipeline(flags, input, clean_path, out, true);
    if (*inject_cmd) {
      per_type = mv->count() + ty->count() + pv->count() + ol->count() + rv->count() > 0;
      return cmd_inject(clean_path, rate, rates, per_type, fds, seed, out, truth_path, log_path);
    }
    if (*eval_cmd) return cmd_evaluate(pred_path, truth_path, dirty_path, clean_path, out);
    if (*sweep_cmd) return cmd_sweep(flags, kind, values, clean_path, fds, rate, out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SpecError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const RunFailure& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return e.exit_code();
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
