#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>

#include "forested/hashing.hpp"
#include "forested/pipeline.hpp"
#include "forested/teacher.hpp"

using namespace forested;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = FORESTED_SOURCE_DIR;

std::map<std::string, std::string> slurp(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  }
  return out;
}

RunConfig fixture_config() {
  auto cfg = load_config(kSource / "data/config.json");
  cfg.provider.mock_dir = (kSource / "data/fixtures").string();
  return cfg;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("forested_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Config, OverlaysAndRejectsUnknownKeys) {
  const auto cfg = config_from_json(nlohmann::json::parse(R"({"rho": 0.2, "gnn": {"epochs": 7},
                                                             "provider": {"kind": "teacher", "teacher_clean": "c.csv"}})"));
  EXPECT_DOUBLE_EQ(cfg.rho, 0.2);
  EXPECT_EQ(cfg.gnn.epochs, 7u);
  EXPECT_EQ(cfg.provider.kind, "teacher");
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"rh0": 0.2})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"rho": "high"})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"provider": {"kind": "carrier-pigeon"}})")), ConfigError);
}

TEST(Config, Validation) {
  RunConfig cfg;
  EXPECT_NO_THROW(validate_config(cfg));
  cfg.rho = 0.0;
  EXPECT_THROW(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.min_depth = 9;
  EXPECT_THROW(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.partition_size = 0;
  EXPECT_THROW(validate_config(cfg), ConfigError);
}

TEST(Config, JsonRoundTripOmitsWorkers) {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.workers = 8;
  const auto j = config_to_json(cfg);
  EXPECT_FALSE(j.contains("workers"));
  const auto back = config_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(config_to_json(back).dump(), j.dump());
  const auto s = sampler_config(cfg);
  EXPECT_EQ(s.seed, 42u);
  EXPECT_DOUBLE_EQ(s.rho, cfg.rho);
}

TEST(Provider, HttpNeedsApiKey) {
  const char* saved = std::getenv(kApiKeyVariable);
  const std::string keep = saved ? saved : "";
  unsetenv(kApiKeyVariable);
  RunConfig cfg;
  const Table t({"a"}, {{"x"}});
  EXPECT_THROW(make_provider(cfg, t), ConfigError);
  setenv(kApiKeyVariable, "k", 1);
  EXPECT_NE(make_provider(cfg, t), nullptr);
  if (saved) {
    setenv(kApiKeyVariable, keep.c_str(), 1);
  } else {
    unsetenv(kApiKeyVariable);
  }
  cfg.provider.kind = "teacher";
  EXPECT_THROW(make_provider(cfg, t), ConfigError);
}

TEST(Forest, FixtureRunsAreByteIdentical) {
  const auto cfg = fixture_config();
  const auto dirty = load_table(kSource / "data/hospital50_dirty.csv");
  const auto clean = load_table(kSource / "data/hospital50_clean.csv");
  std::vector<std::map<std::string, std::string>> dirs;
  for (std::size_t workers : {1u, 4u}) {
    auto c = cfg;
    c.workers = workers;
    auto provider = make_provider(c, dirty);
    const auto r = run_forested(c, dirty, *provider, &clean);
    ASSERT_TRUE(r.consensus.has_value());
    ASSERT_TRUE(r.metrics.has_value());
    EXPECT_TRUE(r.prediction.same_entries(r.consensus->consensus));
    EXPECT_EQ(r.per_tree_metrics.size(), r.used_trees.size());
    const auto dir = scratch("w" + std::to_string(workers));
    write_run(r, c, dir);
    dirs.push_back(slurp(dir));
    fs::remove_all(dir);
  }
  EXPECT_EQ(dirs[0], dirs[1]);
}

TEST(Forest, ManifestListsEveryFile) {
  const auto cfg = fixture_config();
  const auto dirty = load_table(kSource / "data/hospital50_dirty.csv");
  auto provider = make_provider(cfg, dirty);
  const auto r = run_forested(cfg, dirty, *provider);
  const auto dir = scratch("manifest");
  write_run(r, cfg, dir);
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(manifest["seed"], cfg.seed);
  EXPECT_EQ(manifest["config_sha256"], sha256_hex(config_to_json(cfg).dump()));
  const auto files = slurp(dir);
  EXPECT_EQ(manifest["files"].size() + 1, files.size());
  for (const auto& f : manifest["files"]) {
    const auto rel = f["path"].get<std::string>();
    ASSERT_TRUE(files.count(rel)) << rel;
    EXPECT_EQ(f["sha256"], sha256_hex(files.at(rel)));
  }
  EXPECT_TRUE(files.count("consensus.csv"));
  EXPECT_FALSE(files.count("metrics.json"));
  fs::remove_all(dir);
}

TEST(Forest, DisabledEnsembleUsesTheFirstTree) {
  auto cfg = fixture_config();
  const auto dirty = load_table(kSource / "data/hospital50_dirty.csv");
  auto provider = make_provider(cfg, dirty);
  const auto full = run_forested(cfg, dirty, *provider);
  cfg.disable_ensemble = true;
  const auto single = run_forested(cfg, dirty, *provider);
  EXPECT_FALSE(single.consensus.has_value());
  ASSERT_FALSE(full.trees.empty());
  ASSERT_TRUE(full.trees[0].prediction.has_value());
  EXPECT_TRUE(single.prediction.same_entries(full.trees[0].prediction->matrix));
}

TEST(Forest, SingleTreeRunsOnePartition) {
  const auto cfg = fixture_config();
  const auto dirty = load_table(kSource / "data/hospital50_dirty.csv");
  auto provider = make_provider(cfg, dirty);
  const auto r = run_treeed(cfg, dirty, *provider);
  EXPECT_FALSE(r.forest);
  ASSERT_EQ(r.trees.size(), 1u);
  EXPECT_LE(r.trees[0].rows.size(), cfg.partition_size);
  EXPECT_TRUE(r.prediction.same_entries(r.trees[0].prediction->matrix));
}

TEST(Forest, FailureCodes) {
  RunConfig cfg;
  cfg.rho = 0.5;
  cfg.max_trees = 2;
  cfg.provider.retries = 0;
  const Table dirty({"a", "b"}, {{"1", "x"}, {"2", "y"}, {"3", "z"}, {"4", "w"}});
  ScriptedProvider timeouts;
  timeouts.push_timeout();
  timeouts.push_timeout();
  try {
    run_forested(cfg, dirty, timeouts);
    FAIL();
  } catch (const RunFailure& e) {
    EXPECT_EQ(e.exit_code(), 4);
  }
  ScriptedProvider garbage;
  garbage.push("nope");
  garbage.repeat_last(true);
  try {
    run_forested(cfg, dirty, garbage);
    FAIL();
  } catch (const RunFailure& e) {
    EXPECT_EQ(e.exit_code(), 3);
  }
}

TEST(Forest, TeacherRunFindsErrors) {
  RunConfig cfg = fixture_config();
  cfg.provider = {};
  cfg.provider.kind = "teacher";
  cfg.provider.teacher_clean = (kSource / "data/hospital50_clean.csv").string();
  cfg.provider.teacher_fds = {"zip->city", "zip->state"};
  cfg.gnn.epochs = 100;
  const auto dirty = load_table(kSource / "data/hospital50_dirty.csv");
  const auto clean = load_table(kSource / "data/hospital50_clean.csv");
  auto provider = make_provider(cfg, dirty);
  const auto r = run_forested(cfg, dirty, *provider, &clean);
  ASSERT_TRUE(r.metrics.has_value());
  EXPECT_GT(r.metrics->f1, 0.5);
}
