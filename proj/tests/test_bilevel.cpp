#include <gtest/gtest.h>

#include "styleguard/bilevel.hpp"
#include "test_support.hpp"

using namespace sguard;
using sguard::testing::random_images;
using sguard::testing::tiny_zoo;

namespace {

/// One scalar parameter w with loss (w - target)^2.
struct ScalarModel {
  std::vector<Tensor> p{Tensor::scalar(0.0)};
  std::vector<Tensor>& params() { return p; }
  const std::vector<Tensor>& params() const { return p; }
  double w() const { return p[0][0]; }
};

ParamLoss quadratic(double target) {
  return [target](Graph&, const BoundParams& b, Rng&) {
    return ag::square(ag::add_scalar(b.vars[0], -target));
  };
}

Ensemble ensemble_of(const ModelZoo& zoo) {
  return Ensemble{zoo.surrogates, zoo.crafting_purifiers(), zoo.encoders};
}

ProtectionConfig small_config(std::uint64_t seed) {
  ProtectionConfig c;
  c.N = 3;
  c.K1 = 1;
  c.K2 = 2;
  c.seed = seed;
  return c;
}

/// Mean noise-prediction error of `m` on `x` over a fixed set of draws.
double mean_denoising_error(const DenoiserModel& m, const Tensor& x, const NoiseSchedule& s, int c) {
  Rng rng(777);
  double total = 0.0;
  const int draws = 200;
  for (int i = 0; i < draws; ++i) {
    Graph g;
    total -= denoise_loss(m, g.constant(x), c, s, rng).value().item();
  }
  return total / draws;
}

}  // namespace

TEST(Finetune, ScalarQuadraticStepIsMinusBetaTimesGradient) {
  ScalarModel m;
  m.p[0][0] = 1.5;
  Rng rng(1);
  const double beta = 0.1;
  // d/dw (w - 0.25)^2 at w = 1.5 is 2.5
  const ScalarModel ahead = lookahead_finetune(m, quadratic(0.25), 1, beta, rng);
  EXPECT_DOUBLE_EQ(ahead.w(), 1.5 - beta * 2.5);
  EXPECT_EQ(m.w(), 1.5);

  update_surrogate(m, quadratic(0.25), 1, beta, rng);
  EXPECT_DOUBLE_EQ(m.w(), ahead.w());
}

TEST(Finetune, DescentOnConvexQuadratic) {
  ScalarModel m;
  m.p[0][0] = -2.0;
  Rng rng(2);
  auto loss_at = [](double w) { return (w - 0.5) * (w - 0.5); };
  const double before = loss_at(m.w());
  update_surrogate(m, quadratic(0.5), 3, 0.2, rng);
  EXPECT_LE(loss_at(m.w()), before);
  // three steps of w <- w - 0.4 (w - 0.5) contract the gap by 0.6^3
  EXPECT_NEAR(m.w() - 0.5, (-2.0 - 0.5) * 0.216, 1e-12);
}

TEST(Finetune, ZeroRateAndCopySemanticsOnDenoiser) {
  const ModelZoo& zoo = tiny_zoo();
  const DenoiserModel theta = zoo.base();
  const Tensor x = random_images(Shape{2, 3, 8, 8}, 3);
  const ParamLoss loss = dreambooth_objective(theta, x, x, token::instance, token::class_prompt, zoo.schedule, 1.0);
  Rng a(4), b(4);
  EXPECT_TRUE(lookahead_finetune(theta, loss, 2, 0.0, a) == theta);
  const DenoiserModel moved = lookahead_finetune(theta, loss, 2, 1e-2, b);
  EXPECT_FALSE(moved == theta);
  EXPECT_TRUE(theta == zoo.base());

  DenoiserModel in_place = theta;
  Rng c(4);
  update_surrogate(in_place, loss, 2, 1e-2, c);
  EXPECT_TRUE(in_place == moved);
  EXPECT_THROW(lookahead_finetune(theta, loss, 0, 1e-2, c), ConfigError);
}

TEST(ShuffledCycle, CoversEveryMemberEachEpoch) {
  ShuffledCycle cycle(3, Rng(5));
  for (int epoch = 0; epoch < 4; ++epoch) {
    std::vector<int> seen(3, 0);
    for (int i = 0; i < 3; ++i) ++seen[cycle.next()];
    EXPECT_EQ(seen, std::vector<int>(3, 1));
  }
}

TEST(RunStyleguard, ZeroBudgetKeepsCleanImages) {
  const ModelZoo& zoo = tiny_zoo();
  const Tensor xc = random_images(Shape{2, 3, 8, 8}, 6);
  const Tensor xt = random_images(Shape{2, 3, 8, 8}, 7);
  ProtectionConfig c;
  c.N = 1;
  c.K1 = 1;
  c.K2 = 1;
  c.budget = 0.0;
  c.toggles = LossToggles{true, false, false};
  const RunArtifacts art = run_styleguard(c, xc, xt, ensemble_of(zoo), zoo.schedule);
  ASSERT_TRUE(art.complete) << art.error;
  EXPECT_TRUE(art.x_protected == xc);
}

TEST(RunStyleguard, DeterministicBoundedAndFinite) {
  const ModelZoo& zoo = tiny_zoo();
  const Tensor xc = random_images(Shape{3, 3, 8, 8}, 8);
  const Tensor xt = generate_style_set(StyleKind::gradient, 2, 8, 9, 10);
  const Tensor pristine = xc;
  ProtectionConfig c = small_config(11);
  c.transform_pool = {TransformSpec::identity(), TransformSpec::noise(0.05), TransformSpec::crop(0.75)};
  std::vector<double> linf_per_iteration;
  const RunArtifacts a = run_styleguard(c, xc, xt, ensemble_of(zoo), zoo.schedule);
  const RunArtifacts b = run_styleguard(c, xc, xt, ensemble_of(zoo), zoo.schedule);
  ASSERT_TRUE(a.complete) << a.error;
  EXPECT_TRUE(xc == pristine);
  EXPECT_TRUE(a.x_protected == b.x_protected);
  ASSERT_EQ(a.loss_trace.size(), 3u);
  for (std::size_t i = 0; i < a.loss_trace.size(); ++i) {
    const auto& r = a.loss_trace[i];
    EXPECT_TRUE(std::isfinite(r.denoise) && std::isfinite(r.upscale) && std::isfinite(r.style) && std::isfinite(r.total));
    EXPECT_EQ(r.total, b.loss_trace[i].total);
  }
  for (std::size_t k = 0; k < a.surrogate_checkpoints.size(); ++k) {
    EXPECT_TRUE(a.surrogate_checkpoints[k] == b.surrogate_checkpoints[k]);
  }
  EXPECT_LE(max_abs_diff(a.x_protected, xc), c.budget + 1e-9);
  EXPECT_GT(max_abs_diff(a.x_protected, xc), 0.0);
}

TEST(RunStyleguard, InvariantsHoldAfterEveryIteration) {
  const ModelZoo& zoo = tiny_zoo();
  const Tensor xc = random_images(Shape{2, 3, 8, 8}, 12);
  const Tensor xt = random_images(Shape{2, 3, 8, 8}, 13);
  ProtectionConfig c = small_config(14);
  c.N = 4;
  int calls = 0;
  const RunArtifacts art = run_styleguard(c, xc, xt, ensemble_of(zoo), zoo.schedule, [&](int i, const LossTraceRow&) {
    EXPECT_EQ(i, calls);
    ++calls;
  });
  EXPECT_EQ(calls, 4);
  EXPECT_TRUE(art.complete);
}

TEST(RunStyleguard, ConfigurationErrors) {
  const ModelZoo& zoo = tiny_zoo();
  const Tensor x = random_images(Shape{1, 3, 8, 8}, 15);
  ProtectionConfig c = small_config(16);
  c.toggles = LossToggles{false, false, false};
  EXPECT_THROW(run_styleguard(c, x, x, ensemble_of(zoo), zoo.schedule), ConfigError);
  c = small_config(16);
  c.style_sign = 0.5;
  EXPECT_THROW(run_styleguard(c, x, x, ensemble_of(zoo), zoo.schedule), ConfigError);
  c = small_config(16);
  Ensemble no_encoders = ensemble_of(zoo);
  no_encoders.encoders.clear();
  EXPECT_THROW(run_styleguard(c, x, x, no_encoders, zoo.schedule), ConfigError);
}

TEST(RunStyleguard, DenoiseAscentLowersSurrogateErrorOnProtectedImages) {
  // The denoise term is the negated noise-prediction error, so ascending it
  // moves X_p toward images the co-trained surrogate reconstructs well.
  const ModelZoo& zoo = tiny_zoo();
  const Tensor xc = generate_style_set(StyleKind::stripes, 4, 8, 17, 18);
  const Tensor xt = generate_style_set(StyleKind::gradient, 4, 8, 19, 20);
  ProtectionConfig c;
  c.N = 20;
  c.K1 = 1;
  c.K2 = 4;
  c.seed = 21;
  c.toggles = LossToggles{true, false, false};
  const RunArtifacts art = run_styleguard(c, xc, xt, ensemble_of(zoo), zoo.schedule);
  ASSERT_TRUE(art.complete) << art.error;
  const DenoiserModel& final_surrogate = art.surrogate_checkpoints.front();
  EXPECT_LT(mean_denoising_error(final_surrogate, art.x_protected, zoo.schedule, token::instance),
            mean_denoising_error(final_surrogate, xc, zoo.schedule, token::instance));
}
