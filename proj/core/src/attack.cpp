#include "advsep/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace advsep {

namespace {

// Relative slack for "already inside the ball" so that projecting a projected
// point is a no-op despite rounding in the norm.
constexpr double kInsideSlack = 1e-10;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

bool is_integral(double v) { return std::floor(v) == v; }

std::size_t argmax_abs(std::span<const double> g) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (std::abs(g[i]) > std::abs(g[best])) best = i;
  }
  return best;
}

Array clamp_to_domain(const Array& x, const Array& delta) {
  Array out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + delta[i], 0.0, 1.0);
  return out;
}

Array random_start(const Array& x, const AttackConfig& cfg, std::mt19937_64& rng) {
  Array delta(x.shape());
  if (cfg.norm == Norm::l0) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto count = std::min(idx.size(), static_cast<std::size_t>(cfg.epsilon));
    for (std::size_t j = 0; j < count; ++j) delta[idx[j]] = u(rng);
  } else {
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (double& v : delta.storage()) v = u(rng);
    delta = project(delta, cfg.norm, cfg.epsilon);
  }
  return clamp_to_domain(x, delta);
}

bool improves(double candidate, double best, bool maximize) {
  return maximize ? candidate > best : candidate < best;
}

AttackResult iterate(const MlpModel& model, const AttackObjective& objective, const Array& x,
                     const AttackConfig& cfg, double decay) {
  cfg.validate();
  const LossSpec loss = objective.combined();
  if (cfg.iters == 0) return {x, loss_value(model, x, loss)};

  const double step_sign = objective.maximize ? 1.0 : -1.0;
  std::mt19937_64 rng(cfg.seed);
  AttackResult best{x, objective.maximize ? -INFINITY : INFINITY};
  bool have_best = false;

  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Array xt = r == 0 ? x : random_start(x, cfg, rng);
    Array velocity(x.shape());
    for (std::size_t t = 0; t <= cfg.iters; ++t) {
      if (t == cfg.iters) {
        const double value = loss_value(model, xt, loss);
        if (!have_best || improves(value, best.objective, objective.maximize)) {
          best = {xt, value};
          have_best = true;
        }
        break;
      }
      auto [value, g] = input_grad(model, xt, loss);
      if (t > 0 && (!have_best || improves(value, best.objective, objective.maximize))) {
        best = {xt, value};
        have_best = true;
      }
      const Array* steer = &g;
      if (decay > 0.0) {
        // The step direction is scale-free, so a zero decay skips this and
        // follows the raw gradient exactly like PGD.
        const double l1 = norm_l1(g.flat());
        for (std::size_t i = 0; i < velocity.size(); ++i) {
          velocity[i] = decay * velocity[i] + (l1 > 0.0 ? g[i] / l1 : 0.0);
        }
        steer = &velocity;
      }
      const Array dir = step_direction(*steer, cfg.norm);
      Array delta(x.shape());
      for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] = (xt[i] - x[i]) + step_sign * cfg.alpha * dir[i];
      }
      xt = clamp_to_domain(x, project(delta, cfg.norm, cfg.epsilon));
    }
  }
  return best;
}

}  // namespace

std::string to_string(Norm p) {
  switch (p) {
    case Norm::l0: return "0";
    case Norm::l1: return "1";
    case Norm::l2: return "2";
    case Norm::linf: return "inf";
  }
  return "?";
}

Norm parse_norm(const std::string& s) {
  std::string t = s;
  if (t.size() > 1 && (t[0] == 'l' || t[0] == 'L')) t = t.substr(1);
  if (t == "0") return Norm::l0;
  if (t == "1") return Norm::l1;
  if (t == "2") return Norm::l2;
  if (t == "inf" || t == "infty" || t == "Inf") return Norm::linf;
  throw std::invalid_argument("unknown norm '" + s + "' (expected 0, 1, 2 or inf)");
}

double norm_p(std::span<const double> v, Norm p) {
  switch (p) {
    case Norm::l0: return static_cast<double>(count_nonzero(v));
    case Norm::l1: return norm_l1(v);
    case Norm::l2: return norm_l2(v);
    case Norm::linf: return norm_linf(v);
  }
  return 0.0;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("attack epsilon must be >= 0");
  if (iters > 0 && !(alpha > 0.0)) throw std::invalid_argument("attack alpha must be > 0");
  if (restarts == 0) throw std::invalid_argument("attack restarts must be >= 1");
  if (!(momentum_decay >= 0.0 && momentum_decay <= 1.0)) {
    throw std::invalid_argument("momentum decay must be in [0,1]");
  }
  if (norm == Norm::l0 && !is_integral(epsilon)) {
    throw std::invalid_argument("l0 budget must be an integer count");
  }
}

LossSpec AttackObjective::combined() const {
  if (!q) return base;
  return LossSpec{CompositeLoss{{base, *q}, {1.0, q_sign}, 0.0}};
}

AttackObjective cross_entropy_objective(std::size_t label, std::optional<std::size_t> target) {
  if (target) return {LossSpec{CrossEntropyLoss{*target}}, std::nullopt, 1.0, false};
  return {LossSpec{CrossEntropyLoss{label}}, std::nullopt, 1.0, true};
}

AttackObjective cw_objective(std::size_t label, std::optional<std::size_t> target, double kappa) {
  if (target) return {LossSpec{CwLogitLoss{label, target, kappa}}, std::nullopt, 1.0, false};
  // Ascend on the negated margin of the true class.
  LossSpec neg{CompositeLoss{{LossSpec{CwLogitLoss{label, std::nullopt, kappa}}}, {-1.0}, 0.0}};
  return {std::move(neg), std::nullopt, 1.0, true};
}

AttackObjective center_objective(const Array& centers, std::size_t label,
                                 std::optional<std::size_t> target) {
  const std::size_t c = target.value_or(label);
  auto row = centers.row(c);
  LossSpec loss{CenterDistanceLoss{Array::vector({row.begin(), row.end()})}};
  return {std::move(loss), std::nullopt, 1.0, !target.has_value()};
}

AttackObjective adapt(AttackObjective base, LossSpec q, std::optional<double> q_sign) {
  base.q = std::move(q);
  base.q_sign = q_sign.value_or(1.0);
  return base;
}

Array step_direction(const Array& g, Norm p) {
  Array d(g.shape());
  switch (p) {
    case Norm::linf:
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = sign_of(g[i]);
      break;
    case Norm::l2: {
      const double n = norm_l2(g.flat());
      if (n > 0.0) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] / n;
      }
      break;
    }
    case Norm::l1:
    case Norm::l0:
      if (g.size() > 0) {
        const std::size_t i = argmax_abs(g.flat());
        d[i] = sign_of(g[i]);
      }
      break;
  }
  return d;
}

Array project(const Array& delta, Norm p, double epsilon) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("projection radius must be >= 0");
  switch (p) {
    case Norm::linf: {
      Array out = delta;
      for (double& v : out.storage()) v = std::clamp(v, -epsilon, epsilon);
      return out;
    }
    case Norm::l2: {
      const double n = norm_l2(delta.flat());
      if (n <= epsilon * (1.0 + kInsideSlack)) return delta;
      Array out = delta;
      const double s = epsilon / n;
      for (double& v : out.storage()) v *= s;
      return out;
    }
    case Norm::l1: {
      const double n = norm_l1(delta.flat());
      if (n <= epsilon * (1.0 + kInsideSlack)) return delta;
      if (epsilon == 0.0) return Array(delta.shape());
      // Sort-and-threshold projection onto the simplex of magnitudes.
      std::vector<double> u(delta.size());
      for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::abs(delta[i]);
      std::sort(u.begin(), u.end(), std::greater<>());
      double cumsum = 0.0;
      double theta = 0.0;
      for (std::size_t j = 0; j < u.size(); ++j) {
        cumsum += u[j];
        const double t = (cumsum - epsilon) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) theta = t;
      }
      Array out(delta.shape());
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = sign_of(delta[i]) * std::max(std::abs(delta[i]) - theta, 0.0);
      }
      return out;
    }
    case Norm::l0: {
      if (!is_integral(epsilon)) throw std::invalid_argument("l0 budget must be an integer count");
      const auto keep = static_cast<std::size_t>(epsilon);
      if (count_nonzero(delta.flat()) <= keep) return delta;
      std::vector<std::size_t> idx(delta.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(delta[a]) > std::abs(delta[b]);
      });
      Array out(delta.shape());
      for (std::size_t j = 0; j < keep; ++j) out[idx[j]] = delta[idx[j]];
      return out;
    }
  }
  return delta;
}

AttackResult fgsm(const MlpModel& model, const AttackObjective& objective, const Array& x,
                  double epsilon, Norm p) {
  AttackConfig cfg;
  cfg.norm = p;
  cfg.epsilon = epsilon;
  cfg.validate();
  const LossSpec loss = objective.combined();
  if (epsilon == 0.0) return {x, loss_value(model, x, loss)};
  const auto g = input_grad(model, x, loss).input_grad;
  const Array dir = step_direction(g, p);
  const double s = objective.maximize ? 1.0 : -1.0;
  Array delta(x.shape());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = s * epsilon * dir[i];
  Array x_adv = clamp_to_domain(x, project(delta, p, epsilon));
  return {x_adv, loss_value(model, x_adv, loss)};
}

AttackResult pgd(const MlpModel& model, const AttackObjective& objective, const Array& x,
                 const AttackConfig& cfg) {
  return iterate(model, objective, x, cfg, 0.0);
}

AttackResult mim(const MlpModel& model, const AttackObjective& objective, const Array& x,
                 const AttackConfig& cfg) {
  return iterate(model, objective, x, cfg, cfg.momentum_decay);
}

AttackResult cw_confidence_search(const std::function<AttackResult(double kappa)>& run,
                                  const std::function<bool(const Array&)>& succeeded, double lo,
                                  double hi, std::size_t steps) {
  if (!(lo <= hi)) throw std::invalid_argument("confidence range must satisfy lo <= hi");
  AttackResult best = run(lo);
  if (!succeeded(best.x_adv)) return best;
  for (std::size_t s = 0; s < steps; ++s) {
    const double mid = 0.5 * (lo + hi);
    AttackResult r = run(mid);
    if (succeeded(r.x_adv)) {
      best = std::move(r);
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return best;
}

bool within_budget(const Array& x_adv, const Array& x, Norm p, double epsilon) {
  if (x_adv.size() != x.size()) return false;
  Array d(x.shape());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(x_adv[i] >= 0.0 && x_adv[i] <= 1.0)) return false;
    d[i] = x_adv[i] - x[i];
  }
  return norm_p(d.flat(), p) <= epsilon * (1.0 + 1e-9);
}

}  // namespace advsep
