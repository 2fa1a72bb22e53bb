#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "advsep/dataset.hpp"
#include "advsep/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advsep: train and attack representation-space adversarial detectors"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 0;
  app.add_option("--config", config_path, "experiment config (JSON, comments allowed)")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out, "override the output directory");
  app.add_option("--threads", threads, "worker threads for the attack matrix");

  const std::map<std::string, std::function<void(const advsep::ExperimentConfig&)>> commands{
      {"prepare", advsep::cmd_prepare}, {"train", advsep::cmd_train},
      {"attack", advsep::cmd_attack},   {"eval", advsep::cmd_eval},
      {"export-reps", advsep::cmd_export_reps}, {"report", advsep::cmd_report},
  };
  const std::map<std::string, std::string> help{
      {"prepare", "split the dataset and write the manifest"},
      {"train", "train the detector and calibrate thresholds"},
      {"attack", "run the attack matrix (resumes finished cells)"},
      {"eval", "compute ASR-p and EROC per attack"},
      {"export-reps", "dump benign and adversarial representations as CSV"},
      {"report", "write report.md from the evaluation"},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name, help.at(name));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    advsep::ExperimentConfig cfg = advsep::load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.train.seed = *seed;
    }
    if (!out.empty()) cfg.output_dir = out;
    if (threads > 0) cfg.threads = threads;
    const std::string name = app.get_subcommands().front()->get_name();
    commands.at(name)(cfg);
  } catch (const advsep::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const advsep::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
