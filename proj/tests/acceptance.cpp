#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include "fixtures.hpp"
#include "forested/consensus.hpp"
#include "forested/evalkit.hpp"
#include "forested/gnn.hpp"
#include "forested/pipeline.hpp"
#include "forested/rng.hpp"
#include "forested/sampler.hpp"
#include "forested/synthetic.hpp"
#include "forested/teacher.hpp"
#include "forested/tree.hpp"
#include "oracles.hpp"

using namespace forested;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = FORESTED_SOURCE_DIR;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Verdict em_oracle() {
  const auto crowd = oracle::planted_crowd(500, {0.9, 0.8, 0.55}, 0.2, 2024);
  const auto preds = oracle::to_matrices(crowd.votes, 50, 10);
  const auto t0 = Clock::now();
  const auto res = run_em(preds);
  const double secs = seconds_since(t0);
  const auto ref = oracle::reference_em(crowd.votes);
  std::size_t label_mismatch = 0;
  double theta_err = 0.0;
  for (std::size_t c = 0; c < ref.labels.size(); ++c) label_mismatch += res.consensus.data()[c] != ref.labels[c];
  for (std::size_t r = 0; r < 3; ++r) {
    for (int y = 0; y < 2; ++y) {
      for (int k = 0; k < 2; ++k) theta_err = std::max(theta_err, std::abs(res.state.theta[r][y][k] - ref.theta[r][y][k]));
    }
  }
  return {label_mismatch == 0 && theta_err <= 1e-6 && secs < 1.0,
          "label mismatches " + std::to_string(label_mismatch) + ", max theta error " + fmt("%.2e", theta_err) +
              ", " + fmt("%.4f", secs) + " s"};
}

Verdict elbo_monotone() {
  Rng rng(77);
  const std::size_t Rs[] = {1, 3, 5, 10};
  std::size_t ensembles = 0, bad_steps = 0, bad_simplex = 0;
  double worst_drop = 0.0;
  for (std::size_t e = 0; e < 120; ++e) {
    const std::size_t R = Rs[e % 4];
    const std::size_t n = 2 + rng.index(60);
    const std::size_t m = 1 + rng.index(std::min<std::size_t>(30, 2000 / n));
    std::vector<ErrorMatrix> preds;
    if (e % 2 == 0) {
      std::vector<double> acc;
      for (std::size_t r = 0; r < R; ++r) acc.push_back(rng.uniform(0.4, 0.98));
      preds = oracle::to_matrices(oracle::planted_crowd(n * m, acc, rng.uniform(0.05, 0.5), 1000 + e).votes, n, m);
    } else {
      std::vector<std::vector<int>> v(R, std::vector<int>(n * m));
      const double p = rng.uniform(0.05, 0.6);
      for (auto& row : v) {
        for (auto& x : row) x = rng.bernoulli(p) ? 1 : 0;
      }
      preds = oracle::to_matrices(v, n, m);
    }
    const auto res = run_em(preds);
    ++ensembles;
    const auto& tr = res.state.elbo_trace;
    for (std::size_t k = 1; k < tr.size(); ++k) {
      const double drop = tr[k - 1] - tr[k];
      worst_drop = std::max(worst_drop, drop);
      if (drop > 1e-9) ++bad_steps;
    }
    auto off = [](double s) { return std::abs(s - 1.0) > 1e-12; };
    for (const auto& t : res.state.theta) bad_simplex += off(t[0][0] + t[0][1]) + off(t[1][0] + t[1][1]);
    for (const auto& g : res.state.gamma) bad_simplex += off(g[0] + g[1]);
    bad_simplex += off(res.state.eta[0] + res.state.eta[1]);
  }
  return {bad_steps == 0 && bad_simplex == 0 && ensembles >= 100,
          std::to_string(ensembles) + " ensembles, decreasing steps " + std::to_string(bad_steps) + " (worst drop " +
              fmt("%.2e", worst_drop) + "), simplex violations " + std::to_string(bad_simplex)};
}

Verdict dominance() {
  const std::vector<double> acc{0.9, 0.8, 0.55};
  const auto crowd = oracle::planted_crowd(5000, acc, 0.2, 2024);
  const auto preds = oracle::to_matrices(crowd.votes, 500, 10);
  const auto t0 = Clock::now();
  const auto res = run_em(preds);
  const double secs = seconds_since(t0);
  auto accuracy = [&](const std::vector<int>& v) {
    std::size_t ok = 0;
    for (std::size_t c = 0; c < v.size(); ++c) ok += v[c] == crowd.truth[c];
    return static_cast<double>(ok) / static_cast<double>(v.size());
  };
  double best = 0.0;
  for (const auto& v : crowd.votes) best = std::max(best, accuracy(v));
  const double cons = accuracy(std::vector<int>(res.consensus.data().begin(), res.consensus.data().end()));
  const bool ordered = res.state.reliability(0) > res.state.reliability(1) && res.state.reliability(1) > res.state.reliability(2);
  return {cons >= best && ordered && secs < 5.0,
          "consensus accuracy " + fmt("%.4f", cons) + " vs best annotator " + fmt("%.4f", best) + ", reliabilities " +
              fmt("%.3f", res.state.reliability(0)) + "/" + fmt("%.3f", res.state.reliability(1)) + "/" +
              fmt("%.3f", res.state.reliability(2)) + ", " + fmt("%.3f", secs) + " s"};
}

Verdict gradient_check() {
  const Table t({"city", "zip"}, {{"birmingham", "35203"}, {"atlanta", "30303"}, {"", "35203"}});
  const auto g = build_bipartite_graph(t, 6, 3);
  GnnParams p = GnnParams::init(2, 4, g.edge_dim(), 11);
  Rng rng(12);
  for (auto* m : p.matrices()) {
    for (Eigen::Index k = 0; k < m->size(); ++k) m->data()[k] = rng.uniform(-0.3, 0.3);
  }
  for (auto* v : p.vectors()) {
    for (auto& x : *v) x = rng.uniform(-0.3, 0.3);
  }
  const std::vector<CellLabel> labels{{0, 0, 1}, {1, 1, 0}, {2, 0, 1}, {1, 0, 0}, {2, 1, 1}};
  const auto lg = loss_and_gradient(g, p, labels);
  const double eps = 1e-4;
  double worst = 0.0;
  std::size_t checked = 0;
  auto probe = [&](double* param, double analytic) {
    const double keep = *param;
    GnnParams& q = p;
    *param = keep + eps;
    const double up = bce_loss(forward(g, q), labels);
    *param = keep - eps;
    const double down = bce_loss(forward(g, q), labels);
    *param = keep;
    const double numeric = (up - down) / (2 * eps);
    worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic)));
    ++checked;
  };
  auto pm = p.matrices();
  auto gm = lg.grad.matrices();
  for (std::size_t k = 0; k < pm.size(); ++k) {
    for (Eigen::Index e = 0; e < pm[k]->size(); ++e) probe(pm[k]->data() + e, gm[k]->data()[e]);
  }
  auto pv = p.vectors();
  auto gv = lg.grad.vectors();
  for (std::size_t k = 0; k < pv.size(); ++k) {
    for (Eigen::Index e = 0; e < pv[k]->size(); ++e) probe(pv[k]->data() + e, gv[k]->data()[e]);
  }
  const double fwd = (forward(g, p).logits - oracle::straight_line_logits(g, p)).cwiseAbs().maxCoeff();
  return {worst < 1e-4 && fwd <= 1e-10 && pm.size() + pv.size() == p.tensor_names().size(),
          std::to_string(pm.size() + pv.size()) + " tensors, " + std::to_string(checked) +
              " entries, max relative error " + fmt("%.2e", worst) + ", forward deviation " + fmt("%.2e", fwd)};
}

Verdict gnn_learnability() {
  const auto clean = project(synthetic_hospital(200, 5), {"zip", "city", "state", "score"});
  InjectionSpec spec;
  spec.rule_violation = 0.05;
  spec.fds = {parse_fd("zip->city")};
  spec.seed = 5;
  const auto inj = inject_errors(clean, spec);
  const std::size_t city = inj.dirty.attribute_index("city");
  std::vector<CellLabel> labels;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < inj.dirty.n_rows(); ++i) {
    const int y = inj.truth.at(i, city);
    labels.push_back({i, city, y});
    positives += static_cast<std::size_t>(y);
  }
  const auto t0 = Clock::now();
  const auto g = build_bipartite_graph(inj.dirty);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.learning_rate = 1e-2;
  cfg.hidden_dim = 64;
  cfg.seed = 5;
  const auto res = train(g, labels, cfg);
  const auto f = forward(g, res.params);
  std::size_t ok = 0;
  for (const auto& l : labels) ok += infer_branch(f.probabilities(l.row, l.col)) == (l.label == 1);
  const double secs = seconds_since(t0);
  const double accuracy = static_cast<double>(ok) / static_cast<double>(labels.size());
  const double majority = 1.0 - static_cast<double>(positives) / static_cast<double>(labels.size());
  return {accuracy >= 0.9 && secs < 60.0,
          "training accuracy " + fmt("%.4f", accuracy) + " on " + std::to_string(labels.size()) + " labels (" +
              std::to_string(positives) + " violations, majority baseline " + fmt("%.3f", majority) + "), " +
              fmt("%.1f", secs) + " s"};
}

Verdict sampler_exact() {
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto clean = synthetic_hospital(60 + 15 * seed, 100 + seed);
    const auto dirty = inject_errors(clean, uniform_spec(0.08, synthetic_fds(), seed)).dirty;
    SamplerConfig cfg;
    cfg.rho = 0.1 + 0.01 * static_cast<double>(seed);
    cfg.seed = seed;
    const auto s = select_uncertain(dirty, cfg);
    const auto var = oracle::gp_variance(featurize(dirty, cfg.pca_dim).X, s.fit_rows, s.chi, s.jitter);
    const auto s_size = std::min<std::size_t>(100, static_cast<std::size_t>(std::ceil(cfg.rho * dirty.n_rows())));
    mismatches += s.indices != oracle::top_s(var, s_size);
  }
  bool formula = true;
  for (std::size_t n : {50u, 1000u, 2000u, 200000u}) {
    formula = formula && sample_size(n, 0.05, 100) == std::min<std::size_t>(100, static_cast<std::size_t>(std::ceil(0.05 * n)));
  }
  SampleSet s;
  for (std::size_t i = 0; i < 47; ++i) s.indices.push_back(i);
  const auto p = partition(s, 10);
  bool parts = p.partitions.size() == 5 && p.partitions.back().size() == 7;
  for (std::size_t k = 0; k + 1 < p.partitions.size(); ++k) parts = parts && p.partitions[k].size() == 10;
  return {mismatches == 0 && formula && parts, "ranking mismatches " + std::to_string(mismatches) + "/20, s formula " +
                                                  (formula ? "ok" : "wrong") + ", partitions " + (parts ? "ok" : "wrong")};
}

std::map<std::string, std::string> slurp(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  }
  return out;
}

struct EndToEnd {
  RunResult result;
  Verdict verdict;
};

EndToEnd determinism() {
  auto cfg = load_config(kSource / "data/config.json");
  cfg.provider.mock_dir = (kSource / "data/fixtures").string();
  const auto dirty = load_table(kSource / "data/hospital50_dirty.csv");
  const auto clean = load_table(kSource / "data/hospital50_clean.csv");
  std::vector<std::map<std::string, std::string>> dirs;
  std::optional<RunResult> first;
  for (std::size_t workers : {1u, 1u, 1u, 4u}) {
    auto c = cfg;
    c.workers = workers;
    auto provider = make_provider(c, dirty);
    auto r = run_forested(c, dirty, *provider, &clean);
    const auto dir = fs::temp_directory_path() / ("forested_acceptance_" + std::to_string(dirs.size()));
    fs::remove_all(dir);
    write_run(r, c, dir);
    dirs.push_back(slurp(dir));
    fs::remove_all(dir);
    if (!first) first = std::move(r);
  }
  std::size_t differing = 0;
  for (std::size_t k = 1; k < dirs.size(); ++k) differing += dirs[k] != dirs[0];
  return {std::move(*first),
          {differing == 0 && !dirs[0].empty(), std::to_string(dirs.size()) + " runs (workers 1,1,1,4), " +
                                                   std::to_string(dirs[0].size()) + " files each, differing runs " +
                                                   std::to_string(differing)}};
}

Verdict path_soundness(const RunResult& r) {
  std::size_t cells = 0, replay_fail = 0, not_leaf = 0, too_long = 0, trees = 0;
  for (const auto& t : r.trees) {
    if (!t.prediction || !t.tree) continue;
    ++trees;
    const auto& m = t.prediction->matrix;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        ++cells;
        const auto& path = t.prediction->paths.get(i, j);
        bool replay = false;
        try {
          replay = replay_path(*t.tree, path) == (m.at(i, j) == 1);
        } catch (const std::exception&) {
        }
        replay_fail += !replay;
        const auto& last = path.steps.back();
        not_leaf += last.branch.has_value() || t.tree->node(t.tree->index_of(last.node_id)).type != NodeType::leaf;
        too_long += path.steps.size() > 8;
      }
    }
  }
  return {trees > 0 && replay_fail == 0 && not_leaf == 0 && too_long == 0,
          std::to_string(cells) + " cell paths over " + std::to_string(trees) + " trees, replay failures " +
              std::to_string(replay_fail) + ", non-leaf ends " + std::to_string(not_leaf) + ", longer than 8 " +
              std::to_string(too_long)};
}

Verdict case_study() {
  const auto t = fixture::hospital_rows();
  auto tree = build_skeleton(fixture::hospital_tree());
  train_gnn_nodes(tree, prepare_labels(tree, fixture::walk_labels(fixture::hospital_tree(), t, {0, 1, 2}), t), t, {});
  const auto p = predict(tree, t);
  const std::size_t city = t.attribute_index("City");
  const auto& steps = p.paths.get(3, city).steps;
  const std::vector<std::pair<std::string, int>> expected{{"check_phone_format", 0},
                                                          {"gnn_fd_provider_identity", 0},
                                                          {"check_measurement_spacing", 0},
                                                          {"check_canonical_categories", 1}};
  bool path_ok = steps.size() == expected.size() + 1 && steps.back().node_id == "leaf_error";
  for (std::size_t k = 0; path_ok && k < expected.size(); ++k) {
    path_ok = steps[k].node_id == expected[k].first && steps[k].branch == expected[k].second;
  }
  const bool only = p.matrix.count_ones() == 1 && p.matrix.at(3, city) == 1;
  return {only && path_ok, "flagged cells " + std::to_string(p.matrix.count_ones()) + ", explain: " +
                               explain(tree, p.paths, 3, city)};
}

Verdict injection_cross_oracle() {
  const auto clean = synthetic_hospital(120, 3);
  const double cells = static_cast<double>(clean.n_rows() * clean.n_cols());
  std::size_t diff_mismatch = 0, count_off = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < 50; ++k) {
    const double rate = 0.01 + 0.29 * static_cast<double>(k) / 49.0;
    const auto r = inject_errors(clean, uniform_spec(rate, synthetic_fds(), 500 + k));
    diff_mismatch += !r.truth.same_entries(diff_error_matrix(r.dirty, clean));
    const double off = std::abs(static_cast<double>(r.truth.count_ones()) - rate * cells);
    worst = std::max(worst, off);
    count_off += off > 1.0;
  }
  return {diff_mismatch == 0 && count_off == 0, "50 specs at 1%..30%, truth/diff mismatches " +
                                                    std::to_string(diff_mismatch) + ", worst count deviation " +
                                                    fmt("%.3f", worst) + " cells"};
}

Verdict ablation() {
  const auto b = fd_benchmark(300, 0.05, 0.02, 11);
  RunConfig cfg;
  cfg.provider.kind = "teacher";
  cfg.provider.teacher_clean = "in-memory";
  cfg.rho = 0.2;
  cfg.max_trees = 6;
  cfg.gnn.epochs = 2000;
  cfg.seed = 11;
  auto run = [&](bool disable) {
    auto c = cfg;
    c.disable_gnn_nodes = disable;
    TeacherProvider teacher(b.dirty, b.clean, b.fds);
    const auto t0 = Clock::now();
    const auto r = run_forested(c, b.dirty, teacher, &b.clean);
    return std::make_pair(r.metrics->f1, seconds_since(t0));
  };
  const auto [full, full_s] = run(false);
  const auto [wo, wo_s] = run(true);
  return {full >= wo && full_s < 300.0 && wo_s < 300.0,
          "full F1 " + fmt("%.4f", full) + " (" + fmt("%.1f", full_s) + " s) vs wo-gnn F1 " + fmt("%.4f", wo) + " (" +
              fmt("%.1f", wo_s) + " s)"};
}

Verdict reliability_correlation() {
  Rng rng(31);
  ErrorMatrix truth(200, 10, MatrixKind::ground_truth);
  for (std::size_t i = 0; i < truth.rows(); ++i) {
    for (std::size_t j = 0; j < truth.cols(); ++j) truth.set(i, j, rng.bernoulli(0.15));
  }
  const std::vector<double> acc{0.95, 0.9, 0.85, 0.75, 0.65};
  std::vector<ErrorMatrix> preds;
  std::vector<Metrics> per_tree;
  for (std::size_t r = 0; r < acc.size(); ++r) {
    preds.push_back(simulate_annotator(truth, acc[r], 40 + r));
    per_tree.push_back(metrics(preds.back(), truth));
  }
  const auto res = run_em(preds);
  const auto rep = reliability_report(res.state, per_tree);
  const double r = rep.pearson_r.value_or(-2.0);
  return {rep.pearson_r.has_value() && r > 0.7, "Pearson r " + fmt("%.4f", r) + " over 5 trees"};
}

}  // namespace

int main() {
  std::size_t failed = 0;
  auto report = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "em_oracle_equivalence", em_oracle);
  report(2, "elbo_monotone", elbo_monotone);
  report(3, "consensus_dominance", dominance);
  report(4, "gnn_gradient_check", gradient_check);
  report(5, "gnn_learnability", gnn_learnability);
  report(6, "sampler_exactness", sampler_exact);
  std::optional<RunResult> e2e;
  report(7, "end_to_end_determinism", [&] {
    auto d = determinism();
    e2e = std::move(d.result);
    return d.verdict;
  });
  report(8, "path_soundness", [&] {
    if (!e2e) return Verdict{false, "no end-to-end run"};
    return path_soundness(*e2e);
  });
  report(9, "case_study_fixture", case_study);
  report(10, "injection_cross_oracle", injection_cross_oracle);
  report(11, "ablation_directionality", ablation);
  report(12, "reliability_f1_correlation", reliability_correlation);
  std::printf("%zu/12 criteria passed\n", 12 - failed);
  return failed == 0 ? 0 : 1;
}
