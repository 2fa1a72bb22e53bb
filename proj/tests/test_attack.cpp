#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "advsep/attack.hpp"
#include "advsep/mlp.hpp"

using namespace advsep;

namespace {

double dist2(const Array& a, const Array& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Nearest point of the eps-ball found by scanning a grid over the cube.
double brute_force_distance(const Array& delta, Norm p, double eps, std::size_t steps) {
  const std::size_t d = delta.size();
  std::vector<std::size_t> idx(d, 0);
  double best = INFINITY;
  while (true) {
    Array c(delta.shape());
    for (std::size_t i = 0; i < d; ++i) {
      c[i] = -eps + 2.0 * eps * static_cast<double>(idx[i]) / static_cast<double>(steps);
    }
    if (norm_p(c.flat(), p) <= eps * (1.0 + 1e-12)) best = std::min(best, dist2(c, delta));
    std::size_t k = 0;
    while (k < d && ++idx[k] > steps) idx[k++] = 0;
    if (k == d) break;
  }
  return best;
}

MlpModel small_classifier(std::uint64_t seed) { return MlpModel::random({6, 8, 5}, seed, 3); }

Array random_point(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  Array x = Array::vector(std::vector<double>(d));
  for (double& v : x.storage()) v = u(rng);
  return x;
}

}  // namespace

TEST(Norms, ParseAndCompute) {
  EXPECT_EQ(parse_norm("inf"), Norm::linf);
  EXPECT_EQ(parse_norm("2"), Norm::l2);
  EXPECT_THROW(parse_norm("3"), std::invalid_argument);
  const Array v = Array::vector({3.0, -4.0, 0.0});
  EXPECT_DOUBLE_EQ(norm_p(v.flat(), Norm::l0), 2.0);
  EXPECT_DOUBLE_EQ(norm_p(v.flat(), Norm::l1), 7.0);
  EXPECT_DOUBLE_EQ(norm_p(v.flat(), Norm::l2), 5.0);
  EXPECT_DOUBLE_EQ(norm_p(v.flat(), Norm::linf), 4.0);
}

TEST(Projection, MatchesBruteForceNearestPoint) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (Norm p : {Norm::l1, Norm::l2, Norm::linf}) {
    for (std::size_t d : {2u, 3u}) {
      for (int trial = 0; trial < 8; ++trial) {
        Array delta = Array::vector(std::vector<double>(d));
        for (double& v : delta.storage()) v = u(rng);
        const double eps = 0.5;
        const Array proj = project(delta, p, eps);
        EXPECT_LE(norm_p(proj.flat(), p), eps * (1.0 + 1e-9));
        const std::size_t steps = d == 2 ? 400 : 80;
        const double brute = brute_force_distance(delta, p, eps, steps);
        const double cell = 2.0 * eps / static_cast<double>(steps) * std::sqrt(static_cast<double>(d));
        EXPECT_LE(dist2(proj, delta), brute + 1e-12) << to_string(p);
        EXPECT_GE(dist2(proj, delta), brute - cell) << to_string(p);
      }
    }
  }
}

TEST(Projection, IdempotentForEveryNorm) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Norm p : {Norm::l0, Norm::l1, Norm::l2, Norm::linf}) {
    Array delta = Array::vector(std::vector<double>(20));
    for (double& v : delta.storage()) v = n(rng);
    const double eps = p == Norm::l0 ? 4.0 : 0.7;
    const Array once = project(delta, p, eps);
    EXPECT_EQ(project(once, p, eps), once) << to_string(p);
  }
}

TEST(Projection, L0KeepsLargestAndBreaksTiesByIndex) {
  const Array delta = Array::vector({0.5, -2.0, 0.5, 1.0, 0.1});
  EXPECT_EQ(project(delta, Norm::l0, 2.0), Array::vector({0, -2.0, 0, 1.0, 0}));
  EXPECT_EQ(project(delta, Norm::l0, 3.0), Array::vector({0.5, -2.0, 0, 1.0, 0}));
  EXPECT_THROW(project(delta, Norm::l0, 1.5), std::invalid_argument);
  EXPECT_THROW(project(delta, Norm::l2, -1.0), std::invalid_argument);
}

TEST(StepDirection, PerNorm) {
  const Array g = Array::vector({0.3, -4.0, 0.0});
  EXPECT_EQ(step_direction(g, Norm::linf), Array::vector({1, -1, 0}));
  EXPECT_EQ(step_direction(g, Norm::l1), Array::vector({0, -1, 0}));
  const Array d2 = step_direction(g, Norm::l2);
  EXPECT_NEAR(norm_p(d2.flat(), Norm::l2), 1.0, 1e-15);
  EXPECT_NEAR(d2[0], 0.3 / std::sqrt(16.09), 1e-15);
  EXPECT_EQ(step_direction(Array::vector({0, 0}), Norm::l2), Array::vector({0, 0}));
}

TEST(Pgd, SingleStepWithFullAlphaIsFgsm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MlpModel m = small_classifier(seed);
    const Array x = random_point(6, seed + 100);
    for (Norm p : {Norm::linf, Norm::l2, Norm::l1}) {
      for (auto target : {std::optional<std::size_t>{}, std::optional<std::size_t>{2}}) {
        const auto obj = cross_entropy_objective(0, target);
        AttackConfig cfg;
        cfg.norm = p;
        cfg.epsilon = 0.25;
        cfg.alpha = 0.25;
        cfg.iters = 1;
        const auto a = pgd(m, obj, x, cfg);
        const auto b = fgsm(m, obj, x, 0.25, p);
        EXPECT_EQ(a.x_adv, b.x_adv);
        EXPECT_EQ(a.objective, b.objective);
      }
    }
  }
}

TEST(Mim, ZeroDecayIsPgd) {
  const MlpModel m = small_classifier(3);
  const Array x = random_point(6, 9);
  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.alpha = 0.02;
  cfg.iters = 30;
  cfg.momentum_decay = 0.0;
  const auto obj = cross_entropy_objective(1, std::nullopt);
  EXPECT_EQ(mim(m, obj, x, cfg).x_adv, pgd(m, obj, x, cfg).x_adv);
}

TEST(Pgd, StaysInBudgetAndImproves) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const MlpModel m = small_classifier(seed);
    const Array x = random_point(6, seed);
    for (Norm p : {Norm::linf, Norm::l2, Norm::l1}) {
      AttackConfig cfg;
      cfg.norm = p;
      cfg.epsilon = 0.3;
      cfg.alpha = 0.05;
      cfg.iters = 40;
      cfg.restarts = 2;
      cfg.seed = seed;
      const auto un = cross_entropy_objective(0, std::nullopt);
      const auto r = pgd(m, un, x, cfg);
      EXPECT_TRUE(within_budget(r.x_adv, x, p, 0.3));
      EXPECT_GE(r.objective, loss_value(m, x, un.combined()));
      EXPECT_DOUBLE_EQ(r.objective, loss_value(m, r.x_adv, un.combined()));

      cfg.target = 2;
      const auto tg = cross_entropy_objective(0, 2);
      const auto rt = pgd(m, tg, x, cfg);
      EXPECT_TRUE(within_budget(rt.x_adv, x, p, 0.3));
      EXPECT_LE(rt.objective, loss_value(m, x, tg.combined()));
    }
  }
}

TEST(Pgd, ZeroBudgetReturnsInput) {
  const MlpModel m = small_classifier(1);
  const Array x = random_point(6, 2);
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  cfg.iters = 10;
  EXPECT_EQ(pgd(m, cross_entropy_objective(0, std::nullopt), x, cfg).x_adv, x);
  cfg.epsilon = 0.1;
  cfg.iters = 0;
  EXPECT_EQ(pgd(m, cross_entropy_objective(0, std::nullopt), x, cfg).x_adv, x);
}

TEST(Pgd, RestartsAreSeeded) {
  const MlpModel m = small_classifier(2);
  const Array x = random_point(6, 4);
  AttackConfig cfg;
  cfg.epsilon = 0.3;
  cfg.alpha = 0.03;
  cfg.iters = 10;
  cfg.restarts = 3;
  cfg.seed = 17;
  const auto obj = cross_entropy_objective(0, std::nullopt);
  EXPECT_EQ(pgd(m, obj, x, cfg).x_adv, pgd(m, obj, x, cfg).x_adv);
}

TEST(Adapt, ZeroQLeavesObjectiveUnchanged) {
  const MlpModel m = small_classifier(4);
  const Array x = random_point(6, 1);
  const auto base = cw_objective(1, std::nullopt, 0.5);
  const auto adapted = adapt(base, LossSpec{ZeroLoss{}});
  EXPECT_DOUBLE_EQ(loss_value(m, x, adapted.combined()), loss_value(m, x, base.combined()));
  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.alpha = 0.02;
  cfg.iters = 15;
  EXPECT_EQ(pgd(m, adapted, x, cfg).x_adv, pgd(m, base, x, cfg).x_adv);
}

TEST(Adapt, SignControlsDirection) {
  const MlpModel m = MlpModel::random({4, 6, 3}, 8, 3);
  const Array x = random_point(4, 3);
  const Array c = Array::vector({1.0, 0.0, 0.0});
  const LossSpec q{CenterDistanceLoss{c, false}};
  const auto base = cross_entropy_objective(0, std::nullopt);
  const double l = loss_value(m, x, base.combined());
  const double qv = loss_value(m, x, q);
  EXPECT_NEAR(loss_value(m, x, adapt(base, q).combined()), l + qv, 1e-12);
  EXPECT_NEAR(loss_value(m, x, adapt(base, q, -1.0).combined()), l - qv, 1e-12);
}

TEST(Objectives, Conventions) {
  EXPECT_TRUE(cross_entropy_objective(0, std::nullopt).maximize);
  EXPECT_FALSE(cross_entropy_objective(0, 1).maximize);
  EXPECT_TRUE(cw_objective(0, std::nullopt).maximize);
  EXPECT_FALSE(cw_objective(0, 2).maximize);
  EXPECT_TRUE(center_objective(Array::matrix(2, 2, {1, 0, 0, 1}), 0, std::nullopt).maximize);
  EXPECT_FALSE(center_objective(Array::matrix(2, 2, {1, 0, 0, 1}), 0, 1).maximize);
}

TEST(Config, ValidateRejectsBadValues) {
  AttackConfig ok;
  EXPECT_NO_THROW(ok.validate());
  auto bad = ok;
  bad.epsilon = -0.1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.alpha = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.restarts = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.momentum_decay = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.norm = Norm::l0;
  bad.epsilon = 2.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(WithinBudget, ChecksNormAndDomain) {
  const Array x = Array::vector({0.5, 0.5});
  EXPECT_TRUE(within_budget(Array::vector({0.8, 0.2}), x, Norm::linf, 0.3));
  EXPECT_FALSE(within_budget(Array::vector({0.81, 0.2}), x, Norm::linf, 0.3));
  EXPECT_FALSE(within_budget(Array::vector({0.8, 0.2}), x, Norm::l2, 0.3));
  EXPECT_FALSE(within_budget(Array::vector({1.1, 0.5}), Array::vector({1.0, 0.5}), Norm::linf, 0.3));
}

TEST(CwSearch, KeepsLargestSucceedingKappa) {
  // Success iff kappa <= 3.3; the result encodes kappa in its first coordinate.
  auto run = [](double kappa) { return AttackResult{Array::vector({kappa}), 0.0}; };
  auto ok = [](const Array& a) { return a[0] <= 3.3; };
  const auto r = cw_confidence_search(run, ok, 0.0, 10.0, 20);
  EXPECT_LE(r.x_adv[0], 3.3);
  EXPECT_GT(r.x_adv[0], 3.29);
  const auto none = cw_confidence_search(run, [](const Array&) { return false; }, 0.0, 10.0, 5);
  EXPECT_EQ(none.x_adv[0], 0.0);
}
