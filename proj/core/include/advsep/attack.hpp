#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "advsep/array.hpp"
#include "advsep/loss.hpp"
#include "advsep/mlp.hpp"

namespace advsep {

enum class Norm { l0, l1, l2, linf };

std::string to_string(Norm p);
Norm parse_norm(const std::string& s);  // "0", "1", "2", "inf" (also "l0", "linf", ...)

// ||v||_p; for l0 the count of non-zero entries.
double norm_p(std::span<const double> v, Norm p);

struct AttackConfig {
  Norm norm = Norm::linf;
  double epsilon = 0.3;
  double alpha = 0.01;
  std::size_t iters = 1000;
  std::optional<std::size_t> target;  // targeted when set
  double momentum_decay = 0.0;
  std::size_t restarts = 1;
  std::uint64_t seed = 0;

  bool targeted() const { return target.has_value(); }
  // Throws std::invalid_argument on eps < 0, alpha <= 0 with iters > 0,
  // restarts == 0, decay outside [0,1] or non-integer eps for l0.
  void validate() const;
};

// What a whitebox attack optimises. `loss` is the base objective; when `q` is
// present the optimised function is loss + q_sign * q.
struct AttackObjective {
  LossSpec base;
  std::optional<LossSpec> q;
  double q_sign = 1.0;
  bool maximize = true;  // untargeted attacks ascend, targeted ones descend

  LossSpec combined() const;
};

// Builders following the sign convention: untargeted objectives are maximised
// with respect to the true label, targeted ones minimised toward the target.
AttackObjective cross_entropy_objective(std::size_t label, std::optional<std::size_t> target);
AttackObjective cw_objective(std::size_t label, std::optional<std::size_t> target, double kappa = 0.0);
AttackObjective center_objective(const Array& centers, std::size_t label,
                                 std::optional<std::size_t> target);

// Adaptive form L_adapt = L + sign * q. With the default sign the detector
// metric is added as is; pass -1 when the attacker ascends (a detector that
// fires on large q must then be pushed down).
AttackObjective adapt(AttackObjective base, LossSpec q, std::optional<double> q_sign = std::nullopt);

Array step_direction(const Array& g, Norm p);

// Euclidean projection onto the l_p ball of radius eps (l1/l2/linf). For l0,
// keeps the eps largest-magnitude coordinates (lowest index wins ties).
Array project(const Array& delta, Norm p, double epsilon);

struct AttackResult {
  Array x_adv;
  double objective = 0.0;  // value of the optimised objective at x_adv
};

AttackResult fgsm(const MlpModel& model, const AttackObjective& objective, const Array& x,
                  double epsilon, Norm p = Norm::linf);

// Iterates x <- clamp01(x0 + project(x - x0 + s * alpha * dir)) and returns the
// best post-step iterate over all iterations and restarts (restart 0 starts at
// x, later ones at a seeded random point of the ball).
AttackResult pgd(const MlpModel& model, const AttackObjective& objective, const Array& x,
                 const AttackConfig& cfg);

// PGD steering with v <- decay * v + g / ||g||_1.
AttackResult mim(const MlpModel& model, const AttackObjective& objective, const Array& x,
                 const AttackConfig& cfg);

// Binary search over the CW confidence kappa in [lo, hi]: keeps the largest
// kappa whose attack still succeeds according to `succeeded`.
AttackResult cw_confidence_search(const std::function<AttackResult(double kappa)>& run,
                                  const std::function<bool(const Array&)>& succeeded, double lo,
                                  double hi, std::size_t steps);

// True when ||x_adv - x||_p <= eps * (1 + 1e-9) and x_adv lies in [0,1]^d.
bool within_budget(const Array& x_adv, const Array& x, Norm p, double epsilon);

}  // namespace advsep
