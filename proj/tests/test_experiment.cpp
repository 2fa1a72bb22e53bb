#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "advsep/experiment.hpp"
#include "advsep/report.hpp"

using namespace advsep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_config() {
  return json::parse(R"({
    "seed": 3,
    "dataset": {"kind": "blobs", "classes": 3, "dim": 4, "spread": 0.08,
                "train_per_class": 40, "calib_per_class": 30, "test_per_class": 12},
    "model": {"hidden": [8]},
    "train": {"epochs": 2, "lr": 0.02, "squared_distance": true,
              "inner_attack": {"norm": "inf", "epsilon": 0.2, "alpha": 0.05, "iters": 3}},
    "attacks": [
      {"name": "pgd_U", "method": "pgd", "norm": "inf", "epsilon": 0.2, "iters": 10,
       "alpha_grid": [0.02, 0.05]},
      {"name": "pgd_T", "method": "pgd", "norm": "2", "epsilon": 0.4, "iters": 10, "alpha": 0.05,
       "targeted": true},
      {"name": "fgsm_U", "method": "fgsm", "norm": "inf", "epsilon": 0.2, "iters": 1, "alpha": 0.2},
      {"name": "multi_U", "method": "multi_target", "norm": "inf", "epsilon": 0.2, "iters": 10, "alpha": 0.05},
      {"name": "nes_U", "method": "nes", "norm": "inf", "epsilon": 0.2, "iters": 5, "alpha": 0.05,
       "nes_samples": 10, "max_queries": 200},
      {"name": "boundary_U", "method": "boundary", "norm": "inf", "epsilon": 0.2, "iters": 0,
       "boundary_iters": 50}
    ],
    "metrics": {"p": [5, 1], "max_examples": 9}
  })");
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("advsep_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  os << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(ADVSEP_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void expect_config_error(json j, const std::string& what) {
  EXPECT_THROW(parse_config(j), ConfigError) << what;
}

}  // namespace

TEST(Config, ParsesAndSortsP) {
  const ExperimentConfig cfg = parse_config(tiny_config());
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.p_list, (std::vector<double>{1.0, 5.0}));
  ASSERT_EQ(cfg.attacks.size(), 6u);
  EXPECT_EQ(cfg.attacks[0].alphas(), (std::vector<double>{0.02, 0.05}));
  EXPECT_EQ(cfg.attacks[1].alphas(), (std::vector<double>{0.05}));
  EXPECT_EQ(cfg.attacks[1].cfg.norm, Norm::l2);
  EXPECT_TRUE(cfg.attacks[1].targeted);
  EXPECT_EQ(cfg.attacks[3].method, AttackMethod::multi_target);
  EXPECT_EQ(cfg.train.seed, 3u);
}

TEST(Config, RejectsMalformedDocuments) {
  auto j = tiny_config();
  j["unknown"] = 1;
  expect_config_error(j, "unknown top-level key");
  j = tiny_config();
  j.erase("seed");
  expect_config_error(j, "missing seed");
  j = tiny_config();
  j["dataset"]["kind"] = "cifar";
  expect_config_error(j, "bad dataset kind");
  j = tiny_config();
  j["dataset"]["spread"] = 0.0;
  expect_config_error(j, "zero spread");
  j = tiny_config();
  j["dataset"] = {{"kind", "mnist"}, {"images", "/nonexistent/images"}, {"labels", "/nonexistent/labels"}};
  expect_config_error(j, "missing mnist files");
  j = tiny_config();
  j["attacks"][0]["method"] = "magic";
  expect_config_error(j, "unknown method");
  j = tiny_config();
  j["attacks"][1]["name"] = "pgd_U";
  expect_config_error(j, "duplicate name");
  j = tiny_config();
  j["attacks"][0]["name"] = "../escape";
  expect_config_error(j, "path in name");
  j = tiny_config();
  j["attacks"][3]["targeted"] = true;
  expect_config_error(j, "targeted multi_target");
  j = tiny_config();
  j["attacks"][4]["nes_samples"] = 3;
  expect_config_error(j, "odd NES samples");
  j = tiny_config();
  j["metrics"]["p"] = {0};
  expect_config_error(j, "p out of range");
  j = tiny_config();
  j["train"]["inner_attack"]["epsilon"] = -1;
  expect_config_error(j, "negative inner epsilon");
  j = tiny_config();
  j["seed"] = "three";
  expect_config_error(j, "wrong type");
}

TEST(Config, CanonicalHashIgnoresThreadsOnly) {
  auto j = tiny_config();
  const std::string h = config_hash(parse_config(j));
  j["threads"] = 8;
  EXPECT_EQ(config_hash(parse_config(j)), h);
  j["seed"] = 4;
  EXPECT_NE(config_hash(parse_config(j)), h);
  const ExperimentConfig a = parse_config(tiny_config());
  EXPECT_EQ(parse_config(to_json(a)).attacks.size(), a.attacks.size());
  EXPECT_EQ(config_hash(parse_config(to_json(a))), config_hash(a));
}

TEST(Config, LoadAllowsComments) {
  TempDir t;
  write_text(t.path() / "c.json", "// header\n" + tiny_config().dump(2) + "\n/* trailing */\n");
  EXPECT_EQ(load_config((t.path() / "c.json").string()).seed, 3u);
  write_text(t.path() / "bad.json", "{ \"seed\": ");
  EXPECT_THROW(load_config((t.path() / "bad.json").string()), ConfigError);
  EXPECT_THROW(load_config((t.path() / "none.json").string()), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"blobs.json", "mnist.json"}) {
    const fs::path p = fs::path(ADVSEP_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_config(p.string())) << name;
  }
}

TEST(Helpers, SpreadIndices) {
  EXPECT_EQ(spread_indices(5, 0), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(spread_indices(5, 9), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(spread_indices(10, 4), (std::vector<std::size_t>{0, 2, 5, 7}));
  const auto v = spread_indices(2000, 200);
  EXPECT_EQ(std::set<std::size_t>(v.begin(), v.end()).size(), 200u);
}

TEST(Helpers, PickTargetIsWrongUniformAndStable) {
  std::vector<std::size_t> counts(5, 0);
  for (std::size_t i = 0; i < 4000; ++i) {
    const std::size_t t = pick_target(9, i, 2, 5);
    ASSERT_NE(t, 2u);
    ASSERT_LT(t, 5u);
    EXPECT_EQ(t, pick_target(9, i, 2, 5));
    ++counts[t];
  }
  for (std::size_t c : {0u, 1u, 3u, 4u}) {
    EXPECT_GT(counts[c], 850u);
    EXPECT_LT(counts[c], 1150u);
  }
  EXPECT_THROW(pick_target(0, 0, 0, 1), std::invalid_argument);
}

TEST(AttackCell, ThreadCountDoesNotChangeResults) {
  const ExperimentConfig cfg = parse_config(tiny_config());
  const Dataset all = synth_blobs(3, 82, 4, 0.08, 3);
  const auto parts = stratified_split(all, {40, 30, 12}, 3);
  const CenterSet cs = make_centers(3);
  DetectorModel det =
      train_separating(make_detector_network(4, {8}, 3, DetectorMode::ours, 3), cs, parts[0], cfg.train, DetectorMode::ours);
  det = calibrate_thresholds(det, parts[1], 1.0);
  const auto rows = spread_indices(parts[2].size(), 9);
  for (const auto& spec : cfg.attacks) {
    const CellResult a = run_attack_cell(det, parts[0], parts[2], rows, spec, spec.alphas()[0], 11, 1);
    const CellResult b = run_attack_cell(det, parts[0], parts[2], rows, spec, spec.alphas()[0], 11, 4);
    ASSERT_EQ(a.records.size(), rows.size()) << spec.name;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(a.adversarial[i], b.adversarial[i]) << spec.name;
      EXPECT_EQ(a.records[i].success, b.records[i].success) << spec.name;
      EXPECT_EQ(a.records[i].index, rows[i]);
      EXPECT_TRUE(within_budget(a.adversarial[i], parts[2].example(rows[i]), spec.cfg.norm, spec.cfg.epsilon))
          << spec.name;
      if (spec.targeted) {
        ASSERT_TRUE(a.records[i].target.has_value());
        EXPECT_NE(*a.records[i].target, a.records[i].label);
      }
    }
    const EvalReport r = evaluate_cell(det, parts[1], parts[2], a, spec, spec.alphas()[0], cfg.p_list, 11);
    EXPECT_EQ(r.n_examples, rows.size());
    EXPECT_EQ(r.asr_by_p.size(), 2u);
  }
}

TEST(Cli, ExitCodes) {
  TempDir t;
  write_text(t.path() / "ok.json", tiny_config().dump());
  auto bad = tiny_config();
  bad["bogus"] = true;
  write_text(t.path() / "bad.json", bad.dump());
  const std::string out = " --out " + (t.path() / "run").string();

  EXPECT_EQ(run_tool("prepare"), 2);  // --config missing
  EXPECT_EQ(run_tool("frobnicate --config " + (t.path() / "ok.json").string()), 2);
  EXPECT_EQ(run_tool("prepare --config " + (t.path() / "bad.json").string() + out), 2);
  EXPECT_EQ(run_tool("prepare --config " + (t.path() / "missing.json").string() + out), 2);
  EXPECT_EQ(run_tool("train --config " + (t.path() / "ok.json").string() + out), 3);  // no prepared data
  EXPECT_EQ(run_tool("--help"), 0);
}

TEST(Cli, FullPipelineResumesAndIsReproducible) {
  TempDir t;
  const fs::path cfg = t.path() / "c.json";
  write_text(cfg, tiny_config().dump());
  const fs::path run = t.path() / "run";
  const std::string base = " --config " + cfg.string() + " --out " + run.string();
  for (const char* cmd : {"prepare", "train", "attack", "eval", "export-reps", "report"}) {
    ASSERT_EQ(run_tool(std::string(cmd) + base + " --threads 2"), 0) << cmd;
  }
  for (const char* f : {"data/manifest.json", "data/train.csv", "model/detector.bin", "model/training_curve.csv",
                        "attacks/pgd_U/a1/records.json", "eval/eval.json", "eval/sweep.json", "eval/eval.csv",
                        "reps/representations.csv", "report.md"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  const json ev = json::parse(read_text(run / "eval" / "eval.json"));
  EXPECT_EQ(ev.at("reports").size(), 6u);
  EXPECT_EQ(json::parse(read_text(run / "eval" / "sweep.json")).at("reports").size(), 7u);

  // Resume: a finished cell is not recomputed.
  const fs::path rec = run / "attacks" / "pgd_U" / "a0" / "records.json";
  const auto stamp = fs::last_write_time(rec);
  ASSERT_EQ(run_tool("attack" + base), 0);
  EXPECT_EQ(fs::last_write_time(rec), stamp);

  // A second run from scratch with another thread count reproduces every
  // artifact byte for byte (report.md differs only in its timestamp line).
  const fs::path run2 = t.path() / "run2";
  const std::string base2 = " --config " + cfg.string() + " --out " + run2.string();
  for (const char* cmd : {"prepare", "train", "attack", "eval", "report"}) {
    ASSERT_EQ(run_tool(std::string(cmd) + base2 + " --threads 1"), 0) << cmd;
  }
  for (const char* f : {"data/test.csv", "model/detector.bin", "attacks/nes_U/a0/adversarial.csv",
                        "attacks/multi_U/a0/records.json", "eval/eval.json"}) {
    EXPECT_EQ(read_text(run / f), read_text(run2 / f)) << f;
  }
  auto body = [](std::string s) { return s.substr(s.find('\n')); };
  EXPECT_EQ(body(read_text(run / "report.md")), body(read_text(run2 / "report.md")));
}
