#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advsep/array.hpp"
#include "advsep/dataset.hpp"
#include "advsep/detector.hpp"

namespace advsep {

// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

// P(random positive outscores random negative), ties count 1/2. Rank-sum method.
double roc_auc(std::span<const double> pos, std::span<const double> neg);

struct ClassScores {
  std::vector<double> pos;  // adversarial detection scores predicted as this class
  std::vector<double> neg;  // benign detection scores predicted as this class
  std::size_t adv_count = 0;
};

struct ErocBreakdown {
  double eroc = 0.0;
  std::vector<double> per_class_auc;     // NaN for classes without adversarials
  std::vector<double> per_class_weight;
};

// sum_i w_i AUC_i with w_i = adv_count_i / sum_j adv_count_j. A class with
// adversarials but no benign negatives scores AUC 0.5.
ErocBreakdown eroc_breakdown(const std::vector<ClassScores>& per_class);
double eroc(const std::vector<ClassScores>& per_class);

// One attacked test example, judged under some detector thresholds.
struct AsrSample {
  bool eligible = false;  // correctly classified and not flagged before the attack
  bool fooled = false;    // wrong label (untargeted) or target label (targeted)
  bool evaded = false;    // q(x_adv) <= 0
};

// Fraction of eligible samples that are both fooled and undetected.
// Throws std::domain_error when nothing is eligible.
double asr(std::span<const AsrSample> samples);

struct AttackOutput {
  Array x_adv;
  std::optional<std::size_t> target;
};
using AttackFn = std::function<AttackOutput(const Array& x, std::size_t label, std::size_t index)>;

// ASR of `attack` against a calibrated detector. Eligibility is judged with
// `eligibility_thresholds` when given (so several ASR-p values can share one
// eligible set), otherwise with the detector's own thresholds.
double asr(const DetectorModel& det, const Dataset& test, const AttackFn& attack,
           const std::optional<Array>& eligibility_thresholds = std::nullopt);

struct EvalReport {
  std::string attack_name;
  Norm norm = Norm::linf;
  double epsilon = 0.0;
  double alpha = 0.0;
  std::size_t iters = 0;
  bool targeted = false;
  std::map<double, double> asr_by_p;
  double eroc = 0.0;
  std::vector<double> per_class_auc;
  std::vector<double> per_class_weight;
  std::size_t n_examples = 0;
  std::size_t n_eligible = 0;
  std::size_t n_adversarial = 0;
  std::uint64_t seed = 0;

  double asr_at(double p) const;
};

// Runs `eval_fn(alpha, k)` for every alpha and keeps the report the attacker
// does best on: highest ASR at the smallest p, ties broken by lower EROC.
EvalReport sweep_worst_case(const std::function<EvalReport(double alpha, std::size_t k)>& eval_fn,
                            const std::vector<double>& alpha_grid, std::size_t k_fixed);

}  // namespace advsep
