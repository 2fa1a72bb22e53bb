#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "advsep/array.hpp"
#include "advsep/attack.hpp"
#include "advsep/dataset.hpp"
#include "advsep/mlp.hpp"

namespace advsep {

using ScalarFn = std::function<double(const Array&)>;
using ProbsFn = std::function<Array(const Array&)>;
using LabelFn = std::function<std::size_t(const Array&)>;

class QueryBudgetExhausted : public std::runtime_error {
 public:
  QueryBudgetExhausted() : std::runtime_error("query budget exhausted") {}
};

class QueryBudget {
 public:
  explicit QueryBudget(std::size_t max_queries) : max_(max_queries) {}
  // Reserves n queries; throws QueryBudgetExhausted (reserving nothing) when
  // that would exceed the cap.
  void spend(std::size_t n = 1);
  bool can_spend(std::size_t n = 1) const { return used_ + n <= max_; }
  std::size_t used() const { return used_; }
  std::size_t max_queries() const { return max_; }

 private:
  std::size_t max_;
  std::size_t used_ = 0;
};

// Antithetic NES estimate (1/(sigma n)) sum_j f(x + sigma u_j) u_j with
// u_{2i+1} = -u_{2i} standard normal. `n` must be even and positive.
Array nes_grad(const ScalarFn& f, const Array& x, double sigma, std::size_t n, std::uint64_t seed);

struct BlackboxResult {
  Array x_adv;
  std::size_t queries = 0;
  bool budget_exhausted = false;
  double final_objective = 0.0;
};

// PGD driven by NES estimates of the victim's class probability. Untargeted:
// lowers p_y; targeted: raises p_target. The best iterate (by that
// probability) is returned.
BlackboxResult nes_attack(const ProbsFn& victim_probs, const Array& x, std::size_t y,
                          const AttackConfig& cfg, double sigma, std::size_t n,
                          std::size_t max_queries);

struct BoundaryParams {
  double orthogonal_step = 0.01;   // relative to current distance
  double contraction_step = 0.01;  // fraction of current distance
  std::size_t init_attempts = 1000;
  std::size_t adapt_window = 10;
  double target_acceptance = 0.25;
};

struct BoundaryStep {
  std::size_t iter = 0;
  std::size_t queries = 0;
  double distance = 0.0;
  bool accepted = false;
};

class NoAdversarialStart : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BoundaryResult {
  Array x_adv;
  Array x_start;
  std::size_t queries = 0;
  std::vector<BoundaryStep> log;
};

// Decision-based random walk along the class boundary (l2 geometry).
BoundaryResult boundary_attack(const LabelFn& label_fn, const Array& x, std::size_t y,
                               std::size_t iters, std::uint64_t seed,
                               const BoundaryParams& params = {});

void write_query_log(std::ostream& os, const std::vector<BoundaryStep>& log);

struct TransferResult {
  std::vector<Array> adversarial;
  std::vector<bool> fooled;  // victim label differs from the true label
  double success_rate = 0.0;
};

// Crafts untargeted cross-entropy PGD examples on `surrogate` and replays them
// against the victim's labels.
TransferResult transfer_attack(const MlpModel& surrogate, const LabelFn& victim_label,
                               const Dataset& examples, const AttackConfig& cfg);

}  // namespace advsep
