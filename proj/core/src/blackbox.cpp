#include "advsep/blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

namespace advsep {

void QueryBudget::spend(std::size_t n) {
  if (!can_spend(n)) throw QueryBudgetExhausted();
  used_ += n;
}

Array nes_grad(const ScalarFn& f, const Array& x, double sigma, std::size_t n, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw std::invalid_argument("NES sigma must be positive");
  if (n == 0 || n % 2 != 0) throw std::invalid_argument("NES sample count must be even and positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = x.size();
  Array g(x.shape());
  Array u(x.shape());
  Array probe(x.shape());
  for (std::size_t pair = 0; pair < n / 2; ++pair) {
    for (double& v : u.storage()) v = normal(rng);
    for (std::size_t i = 0; i < d; ++i) probe[i] = x[i] + sigma * u[i];
    const double up = f(probe);
    for (std::size_t i = 0; i < d; ++i) probe[i] = x[i] - sigma * u[i];
    const double down = f(probe);
    // f(x + s u) u + f(x - s u)(-u)
    const double diff = up - down;
    for (std::size_t i = 0; i < d; ++i) g[i] += diff * u[i];
  }
  const double scale = 1.0 / (sigma * static_cast<double>(n));
  for (double& v : g.storage()) v *= scale;
  return g;
}

BlackboxResult nes_attack(const ProbsFn& victim_probs, const Array& x, std::size_t y,
                          const AttackConfig& cfg, double sigma, std::size_t n,
                          std::size_t max_queries) {
  cfg.validate();
  const std::size_t cls = cfg.target.value_or(y);
  // Untargeted lowers p_y, targeted raises p_target.
  const bool raise = cfg.targeted();
  QueryBudget budget(max_queries);
  auto prob = [&](const Array& v) { return victim_probs(v).flat()[cls]; };

  BlackboxResult out{x, 0, false, 0.0};
  budget.spend();
  out.final_objective = prob(x);
  Array xt = x;
  for (std::size_t t = 0; t < cfg.iters; ++t) {
    if (!budget.can_spend(n + 1)) {
      out.budget_exhausted = true;
      break;
    }
    budget.spend(n);
    Array g = nes_grad(prob, xt, sigma, n, cfg.seed * 1000003ULL + t);
    if (!raise) {
      for (double& v : g.storage()) v = -v;
    }
    const Array dir = step_direction(g, cfg.norm);
    Array delta(x.shape());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = (xt[i] - x[i]) + cfg.alpha * dir[i];
    delta = project(delta, cfg.norm, cfg.epsilon);
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = std::clamp(x[i] + delta[i], 0.0, 1.0);
    budget.spend();
    const double p = prob(xt);
    if (raise ? p > out.final_objective : p < out.final_objective) {
      out.final_objective = p;
      out.x_adv = xt;
    }
  }
  out.queries = budget.used();
  return out;
}

BoundaryResult boundary_attack(const LabelFn& label_fn, const Array& x, std::size_t y,
                               std::size_t iters, std::uint64_t seed,
                               const BoundaryParams& params) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = x.size();
  BoundaryResult out;

  Array cur(x.shape());
  bool found = false;
  for (std::size_t a = 0; a < params.init_attempts && !found; ++a) {
    for (double& v : cur.storage()) v = uniform(rng);
    ++out.queries;
    found = label_fn(cur) != y;
  }
  if (!found) {
    throw NoAdversarialStart("no misclassified uniform sample within " +
                             std::to_string(params.init_attempts) + " attempts");
  }
  out.x_start = cur;

  auto distance = [&](const Array& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += (v[i] - x[i]) * (v[i] - x[i]);
    return std::sqrt(s);
  };
  double dist = distance(cur);
  double ortho = params.orthogonal_step;
  double contract = params.contraction_step;
  std::size_t window = 0;
  std::size_t sphere_hits = 0;
  std::size_t accepts = 0;

  Array eta(x.shape());
  Array cand(x.shape());
  for (std::size_t it = 0; it < iters && dist > 0.0; ++it) {
    // Random direction orthogonal to (x - cur), scaled relative to dist.
    for (double& v : eta.storage()) v = normal(rng);
    double along = 0.0;
    for (std::size_t i = 0; i < d; ++i) along += eta[i] * (x[i] - cur[i]) / dist;
    for (std::size_t i = 0; i < d; ++i) eta[i] -= along * (x[i] - cur[i]) / dist;
    const double en = norm_l2(eta.flat());
    if (en == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) cand[i] = cur[i] + eta[i] * (ortho * dist / en);
    // Back onto the sphere of radius dist around x.
    const double r = distance(cand);
    for (std::size_t i = 0; i < d; ++i) cand[i] = x[i] + (cand[i] - x[i]) * (dist / r);
    for (double& v : cand.storage()) v = std::clamp(v, 0.0, 1.0);

    ++out.queries;
    const bool on_adv_side = label_fn(cand) != y;
    bool accepted = false;
    if (on_adv_side) {
      ++sphere_hits;
      for (std::size_t i = 0; i < d; ++i) cand[i] += contract * (x[i] - cand[i]);
      for (double& v : cand.storage()) v = std::clamp(v, 0.0, 1.0);
      const double nd = distance(cand);
      ++out.queries;
      if (nd < dist && label_fn(cand) != y) {
        cur = cand;
        dist = nd;
        accepted = true;
        ++accepts;
      }
    }
    out.log.push_back({it, out.queries, dist, accepted});

    if (++window == params.adapt_window) {
      const double sphere_rate = static_cast<double>(sphere_hits) / static_cast<double>(window);
      const double accept_rate = static_cast<double>(accepts) / static_cast<double>(window);
      ortho = std::min(1.0, ortho * (sphere_rate > 0.5 ? 1.1 : 0.9));
      contract = std::min(0.5, contract * (accept_rate > params.target_acceptance ? 1.1 : 0.9));
      window = sphere_hits = accepts = 0;
    }
  }
  out.x_adv = cur;
  return out;
}

void write_query_log(std::ostream& os, const std::vector<BoundaryStep>& log) {
  os << "iter,queries,distance,accepted\n";
  for (const auto& s : log) {
    os << s.iter << ',' << s.queries << ',' << s.distance << ',' << (s.accepted ? 1 : 0) << '\n';
  }
}

TransferResult transfer_attack(const MlpModel& surrogate, const LabelFn& victim_label,
                               const Dataset& examples, const AttackConfig& cfg) {
  TransferResult out;
  std::size_t fooled = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::size_t y = examples.labels[i];
    AttackConfig c = cfg;
    c.seed = cfg.seed + i;
    const AttackObjective obj = cross_entropy_objective(y, cfg.target);
    Array adv = pgd(surrogate, obj, examples.example(i), c).x_adv;
    const std::size_t pred = victim_label(adv);
    const bool ok = cfg.target ? pred == *cfg.target : pred != y;
    fooled += ok;
    out.fooled.push_back(ok);
    out.adversarial.push_back(std::move(adv));
  }
  out.success_rate = examples.size() ? static_cast<double>(fooled) / examples.size() : 0.0;
  return out;
}

}  // namespace advsep
