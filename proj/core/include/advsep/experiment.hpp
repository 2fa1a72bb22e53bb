#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advsep/attack.hpp"
#include "advsep/blackbox.hpp"
#include "advsep/dataset.hpp"
#include "advsep/detector.hpp"
#include "advsep/metrics.hpp"

namespace advsep {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AttackMethod { fgsm, pgd, mim, cw, multi_target, nes, boundary, transfer };

std::string to_string(AttackMethod m);
AttackMethod parse_attack_method(const std::string& s);

// One cell of the attack matrix.
struct AttackSpec {
  std::string name;
  AttackMethod method = AttackMethod::pgd;
  AttackConfig cfg;  // target/seed are filled per example
  bool targeted = false;
  bool adaptive = true;            // whitebox attacks include the detector metric
  std::vector<double> alpha_grid;  // empty: just cfg.alpha
  // cw
  double kappa_lo = 0.0;
  double kappa_hi = 10.0;
  std::size_t cw_searches = 5;
  // nes
  double nes_sigma = 0.0;  // 0: 0.001 * sqrt(d)
  std::size_t nes_samples = 100;
  std::size_t max_queries = 20000;
  // boundary
  std::size_t boundary_iters = 5000;
  // transfer
  std::vector<std::size_t> surrogate_hidden;

  std::vector<double> alphas() const;
};

struct DatasetSpec {
  std::string kind = "blobs";  // "mnist" or "blobs"
  std::string images;
  std::string labels;
  std::size_t classes = 3;
  std::size_t dim = 16;
  double spread = 0.1;
  std::size_t train_per_class = 300;
  std::size_t calib_per_class = 200;
  std::size_t test_per_class = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  DatasetSpec data;
  std::vector<std::size_t> hidden{128, 64};
  DetectorMode mode = DetectorMode::ours;
  TrainConfig train;
  std::vector<AttackSpec> attacks;
  std::vector<double> p_list{1.0, 2.0, 5.0};
  std::size_t max_examples = 0;  // attacked test examples, 0 = all
  std::size_t threads = 1;
};

// Parses the config document. Relative dataset paths resolve against
// `base_dir`. Throws ConfigError on anything malformed or missing.
ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir = ".");
// JSON file; // and /* */ comments are allowed.
ExperimentConfig load_config(const std::string& path);

// Canonical form (every field, defaults filled in); `config_hash` is the SHA-1
// of its compact dump. `threads` is excluded since it never changes results.
nlohmann::json to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// m indices spread evenly over [0, n); all of them when m == 0 or m >= n.
std::vector<std::size_t> spread_indices(std::size_t n, std::size_t m);

// Target class for a targeted attack on example `index`: uniform over the
// wrong classes, fixed by (seed, index).
std::size_t pick_target(std::uint64_t seed, std::size_t index, std::size_t label, std::size_t k);

struct ExampleRecord {
  std::size_t index = 0;  // row in the test split
  std::size_t label = 0;
  std::optional<std::size_t> target;
  bool success = false;  // misled and undetected under the stored thresholds, within budget
  double norm_used = 0.0;
  double final_objective = 0.0;
  std::size_t queries = 0;
};

struct CellResult {
  std::vector<ExampleRecord> records;
  std::vector<Array> adversarial;  // same order as records
};

// Runs one attack cell against `det` on the chosen test rows. Per-example work
// is spread over `threads` workers; results do not depend on the thread count.
CellResult run_attack_cell(const DetectorModel& det, const Dataset& train, const Dataset& test,
                           const std::vector<std::size_t>& rows, const AttackSpec& spec,
                           double alpha, std::uint64_t seed, std::size_t threads);

// ASR-p for each p in `p_list` and EROC for one cell. Thresholds are
// recalibrated on `calib` per p; eligibility uses the largest p.
EvalReport evaluate_cell(const DetectorModel& det, const Dataset& calib, const Dataset& test,
                         const CellResult& cell, const AttackSpec& spec, double alpha,
                         const std::vector<double>& p_list, std::uint64_t seed);

// Lifecycle commands. Each reads what earlier steps wrote to cfg.output_dir.
void cmd_prepare(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_attack(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_export_reps(const ExperimentConfig& cfg);
void cmd_report(const ExperimentConfig& cfg);

}  // namespace advsep
