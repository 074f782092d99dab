#include <gtest/gtest.h>

#include <array>

#include "styleguard/pgd.hpp"
#include "test_support.hpp"

using namespace sguard;
using sguard::testing::random_images;

namespace {

const std::array<TransformSpec, 1> kIdentity = {TransformSpec::identity()};

Objective sum_objective() {
  return [](Var x) { return ag::sum(x); };
}

}  // namespace

TEST(Projection, ArithmeticExamples) {
  const double b = 8.0 / 255.0;
  EXPECT_NEAR(project_linf(Tensor::scalar(0.9), Tensor::scalar(0.5), b)[0], 0.5 + b, 1e-15);
  EXPECT_NEAR(project_linf(Tensor::scalar(0.9), Tensor::scalar(0.5), b)[0], 0.531373, 1e-6);
  EXPECT_EQ(project_linf(Tensor::scalar(1.2), Tensor::scalar(0.99), b)[0], 1.0);
  EXPECT_EQ(project_linf(Tensor::scalar(0.51), Tensor::scalar(0.5), b)[0], 0.51);
  EXPECT_THROW(project_linf(Tensor::scalar(0.5), Tensor::scalar(0.5), -1.0), ConfigError);
}

TEST(Sign, ZeroAndOddness) {
  EXPECT_EQ(sign(0.0), 0.0);
  EXPECT_EQ(sign(-0.0), 0.0);
  EXPECT_EQ(sign(3.0), 1.0);
  EXPECT_EQ(sign(-1e-300), -1.0);
}

TEST(PgdStep, SumObjectiveMovesEveryPixelByAlpha) {
  const Tensor x = random_images(Shape{2, 3, 4, 4}, 1);
  Rng rng(2);
  const auto next = pgd_step(PerturbationState::start(x, 8.0 / 255.0, 0.005), sum_objective(), kIdentity, 1, rng);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(next.x_adv[i] - x[i], 0.005, 1e-15);
  EXPECT_EQ(next.steps_done, 1);
}

TEST(PgdStep, ZeroGradientLeavesImageUnchanged) {
  const Tensor x = random_images(Shape{1, 3, 4, 4}, 3);
  Rng rng(4);
  const Objective flat = [](Var v) { return ag::scale(ag::sum(v), 0.0); };
  const auto next = pgd_step(PerturbationState::start(x, 8.0 / 255.0, 0.005), flat, kIdentity, 1, rng);
  EXPECT_TRUE(next.x_adv == x);
}

TEST(PgdStep, NegatedObjectiveNegatesTheStep) {
  const Tensor x = random_images(Shape{1, 3, 4, 4}, 5);
  Rng w(6);
  const Tensor weights = w.normal_tensor(x.shape());
  const Objective f = [&](Var v) { return ag::sum(ag::mul(ag::square(v), v.graph().constant(weights))); };
  const Objective neg = [&](Var v) { return ag::scale(f(v), -1.0); };
  Rng a(7), b(7);
  const auto up = pgd_step(PerturbationState::start(x, 1.0, 0.01), f, kIdentity, 1, a);
  const auto down = pgd_step(PerturbationState::start(x, 1.0, 0.01), neg, kIdentity, 1, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(up.x_adv[i] - x[i], -(down.x_adv[i] - x[i]), 1e-15);
}

TEST(PgdStep, NonFiniteObjectiveIsANumericError) {
  const Tensor x = random_images(Shape{1, 3, 2, 2}, 8);
  Rng rng(9);
  const Objective bad = [](Var v) { return ag::scale(ag::sum(v), std::numeric_limits<double>::quiet_NaN()); };
  EXPECT_THROW(pgd_step(PerturbationState::start(x, 0.1, 0.01), bad, kIdentity, 1, rng), NumericError);
  EXPECT_THROW(run_pgd(PerturbationState::start(x, 0.1, 0.01), sum_objective(), 0, kIdentity, 1, rng), ConfigError);
}

TEST(PgdProperties, BudgetInvariantUnderRandomObjectives) {
  const std::array<TransformSpec, 4> pool = {TransformSpec::identity(), TransformSpec::noise(0.1),
                                             TransformSpec::crop(0.75), TransformSpec::flip()};
  Rng meta(10);
  for (int trial = 0; trial < 40; ++trial) {
    const Tensor x = random_images(Shape{1, 3, 5, 5}, 100 + static_cast<std::uint64_t>(trial));
    // push some pixels to the range boundary
    Tensor edge = x;
    edge[0] = 0.0;
    edge[1] = 1.0;
    const Tensor w = meta.normal_tensor(x.shape());
    const double budget = meta.uniform() * 0.1;
    const Objective f = [&](Var v) { return ag::sum(ag::mul(ag::tanh(ag::scale(v, 3.0)), v.graph().constant(w))); };
    PerturbationState s = PerturbationState::start(edge, budget, 0.004 + 0.02 * meta.uniform());
    Rng rng(meta.integer(0, 1 << 30));
    for (int k = 0; k < 12; ++k) {
      s = pgd_step(s, f, pool, 1 + trial % 3, rng);
      ASSERT_LE(s.linf(), budget + 1e-9);
      ASSERT_TRUE(s.invariants_hold());
    }
  }
}

TEST(RunPgd, QuadraticAscentApproachesTheOptimum) {
  const Tensor x = random_images(Shape{1, 1, 3, 3}, 11);
  Tensor star = x;
  Rng pick(12);
  for (double& v : star.vec()) v += (pick.uniform() - 0.5) * 0.05;
  const Objective f = [&](Var v) { return ag::scale(ag::sum(ag::square(ag::sub(v, v.graph().constant(star)))), -1.0); };
  auto value = [&](const Tensor& t) {
    Graph g;
    return f(g.constant(t)).value().item();
  };
  const double alpha = 0.004;
  PerturbationState s = PerturbationState::start(x, 0.05, alpha);
  Rng rng(13);
  double prev = value(s.x_adv);
  // Analytic sign ascent: each coordinate moves alpha toward x* until it
  // is within alpha, after which it oscillates inside that band.
  for (int k = 0; k < 20; ++k) {
    const Tensor before = s.x_adv;
    s = pgd_step(s, f, kIdentity, 1, rng);
    bool all_close = true;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gap = star[i] - before[i];
      if (std::abs(gap) > alpha) {
        EXPECT_NEAR(s.x_adv[i] - before[i], alpha * sign(gap), 1e-15);
        all_close = false;
      }
    }
    if (!all_close) {
      EXPECT_GE(value(s.x_adv), prev);
    }
    prev = value(s.x_adv);
  }
  EXPECT_LE(max_abs_diff(s.x_adv, star), alpha);
}

TEST(RunPgd, SingleStepAndRepeatability) {
  const Tensor x = random_images(Shape{1, 3, 4, 4}, 14);
  Rng w(15);
  const Tensor weights = w.normal_tensor(x.shape());
  const Objective f = [&](Var v) { return ag::sum(ag::mul(ag::silu(v), v.graph().constant(weights))); };
  const std::array<TransformSpec, 2> pool = {TransformSpec::noise(0.05), TransformSpec::crop(0.75)};
  Rng a(16), b(16), c(16), d(16);
  const auto one = run_pgd(PerturbationState::start(x, 0.03, 0.005), f, 1, pool, 1, a);
  EXPECT_TRUE(one.x_adv == pgd_step(PerturbationState::start(x, 0.03, 0.005), f, pool, 1, b).x_adv);
  const auto r1 = run_pgd(PerturbationState::start(x, 0.03, 0.005), f, 6, pool, 2, c);
  const auto r2 = run_pgd(PerturbationState::start(x, 0.03, 0.005), f, 6, pool, 2, d);
  EXPECT_TRUE(r1.x_adv == r2.x_adv);
}

TEST(RunPgd, JHasNoEffectWithIdentityPool) {
  const Tensor x = random_images(Shape{1, 3, 4, 4}, 17);
  Rng w(18);
  const Tensor weights = w.normal_tensor(x.shape());
  const Objective f = [&](Var v) { return ag::sum(ag::mul(ag::square(v), v.graph().constant(weights))); };
  Rng a(19), b(19);
  const auto j1 = run_pgd(PerturbationState::start(x, 0.03, 0.005), f, 6, kIdentity, 1, a);
  const auto j4 = run_pgd(PerturbationState::start(x, 0.03, 0.005), f, 6, kIdentity, 4, b);
  EXPECT_TRUE(j1.x_adv == j4.x_adv);
}
