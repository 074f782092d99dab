#include <gtest/gtest.h>

#include "styleguard/losses.hpp"
#include "test_support.hpp"

using namespace sguard;
using sguard::testing::autodiff_gradient;
using sguard::testing::check_gradient;
using sguard::testing::evaluate;
using sguard::testing::random_images;

namespace {

/// Predictor that recovers eps exactly when x0 == 0, since then x_t = sqrt(1-ab) eps.
NoisePredictor oracle_for_zero_images(const NoiseSchedule& s) {
  return [&s](Var x_t, int t, int) { return ag::scale(x_t, 1.0 / std::sqrt(1.0 - s.alpha_bar_at(t))); };
}

NoisePredictor zero_predictor() {
  return [](Var x_t, int, int) { return ag::scale(x_t, 0.0); };
}

/// eps_hat = a * x_t + b, elementwise.
NoisePredictor linear_predictor(double a, double b) {
  return [a, b](Var x_t, int, int) { return ag::add_scalar(ag::scale(x_t, a), b); };
}

double mean_sq(const Tensor& t) { return sum_squares(t) / static_cast<double>(t.size()); }

/// 1x1 identity "encoder" on single-channel images, so latent stats are
/// the raw pixel stats.
EncoderModel identity_encoder() {
  EncoderModel e;
  e.weight = Tensor(Shape{1, 1, 1, 1}, 1.0);
  e.bias = Tensor(Shape{1, 1, 1, 1});
  return e;
}

}  // namespace

TEST(DreamboothLoss, PerfectDenoiserGivesZero) {
  const NoiseSchedule s = build_schedule(20, 1e-3, 0.2);
  Graph g;
  Rng rng(1);
  Var zeros = g.constant(Tensor(Shape{2, 3, 4, 4}));
  const double v = dreambooth_loss(oracle_for_zero_images(s), zeros, zeros, 2, 1, s, 1.0, rng).value().item();
  EXPECT_NEAR(v, 0.0, 1e-20);
}

TEST(DreamboothLoss, HandComputedLinearDenoiser) {
  const NoiseSchedule s = build_schedule(20, 1e-3, 0.2);
  const Tensor xi(Shape{1, 1, 2, 2}, std::vector<double>{0.1, 0.4, 0.7, 0.2});
  const Tensor xp(Shape{1, 1, 2, 2}, std::vector<double>{0.9, 0.3, 0.5, 0.6});
  const double a = 0.3, b = -0.05, lam = 0.7;

  Rng rng(42);
  Rng replay = rng;
  Graph g;
  const double v =
      dreambooth_loss(linear_predictor(a, b), g.constant(xi), g.constant(xp), 2, 1, s, lam, rng).value().item();

  // Replay the draws in the documented order: (t, eps) then (t', eps').
  const int t = replay.integer(1, s.T);
  const Tensor eps = replay.normal_tensor(xi.shape());
  const int tp = replay.integer(1, s.T);
  const Tensor epsp = replay.normal_tensor(xp.shape());
  auto term = [&](const Tensor& x0, const Tensor& e, int step) {
    const double ab = s.alpha_bar_at(step);
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double xt = std::sqrt(ab) * x0[i] + std::sqrt(1 - ab) * e[i];
      const double r = e[i] - (a * xt + b);
      acc += r * r;
    }
    return acc / 4.0;
  };
  EXPECT_NEAR(v, term(xi, eps, t) + lam * term(xp, epsp, tp), 1e-6);
}

TEST(DreamboothLoss, ZeroPriorWeightLeavesInstanceTerm) {
  const NoiseSchedule s = build_schedule(20, 1e-3, 0.2);
  const Tensor xi = random_images(Shape{2, 3, 4, 4}, 2);
  Rng a(3), b(3);
  Graph g;
  NoiseDraw di;
  const double full =
      dreambooth_loss(zero_predictor(), g.constant(xi), g.constant(xi), 2, 1, s, 0.0, a, &di).value().item();
  EXPECT_DOUBLE_EQ(full, mean_sq(di.eps));
  EXPECT_THROW(dreambooth_loss(zero_predictor(), g.constant(xi), g.constant(xi), 1, 1, s, 1.0, b), ContractError);
}

TEST(DenoiseLoss, ZeroPerfectAndLinearPredictors) {
  const NoiseSchedule s = build_schedule(20, 1e-3, 0.2);
  Graph g;
  Rng rng(4);
  NoiseDraw d;
  const Tensor x = random_images(Shape{2, 3, 4, 4}, 5);
  const double zero_pred = denoise_loss(zero_predictor(), g.constant(x), 2, s, s.T, rng, &d).value().item();
  EXPECT_DOUBLE_EQ(zero_pred, -mean_sq(d.eps));
  EXPECT_NEAR(denoise_loss(oracle_for_zero_images(s), g.constant(Tensor(x.shape())), 2, s, s.T, rng).value().item(),
              0.0, 1e-20);

  const double a = -0.4, b = 0.1;
  const double v = denoise_loss(linear_predictor(a, b), g.constant(x), 2, s, s.T, rng, &d).value().item();
  const double ab = s.alpha_bar_at(d.t);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xt = std::sqrt(ab) * x[i] + std::sqrt(1 - ab) * d.eps[i];
    acc += std::pow(d.eps[i] - (a * xt + b), 2);
  }
  EXPECT_NEAR(v, -acc / static_cast<double>(x.size()), 1e-6);
  EXPECT_LT(v, 0.0);
}

TEST(DenoiseLoss, TimestepsCoverTheFullRange) {
  const NoiseSchedule s = build_schedule(10, 1e-3, 0.2);
  Rng rng(6);
  std::vector<int> seen(11, 0);
  Graph g;
  Var x = g.constant(random_images(Shape{1, 3, 2, 2}, 1));
  for (int i = 0; i < 2000; ++i) {
    NoiseDraw d;
    denoise_loss(zero_predictor(), x, 2, s, s.T, rng, &d);
    ++seen[static_cast<std::size_t>(d.t)];
  }
  EXPECT_EQ(seen[0], 0);
  for (int t = 1; t <= 10; ++t) EXPECT_GT(seen[static_cast<std::size_t>(t)], 120);
}

TEST(UpscaleLoss, ZeroDeltaReplaysDenoiseLoss) {
  const NoiseSchedule s = build_schedule(20, 1e-3, 0.2);
  const DenoiserModel m = DenoiserModel::create(DenoiserArch{3, 6, 1, 8, 4, false, 0}, 9);
  const Tensor x = random_images(Shape{2, 3, 6, 6}, 7);
  Rng a(8), b(8);
  Graph g;
  const double up = upscale_loss(m, g.constant(x), 0.0, 0, s, a).value().item();
  const double dn = denoise_loss(m, g.constant(x), 0, s, b).value().item();
  EXPECT_EQ(up, dn);
}

TEST(UpscaleLoss, HandComputedWithRecordedPreNoise) {
  const NoiseSchedule s = build_schedule(20, 1e-3, 0.2);
  const Tensor x = random_images(Shape{1, 3, 2, 2}, 10);
  const double a = 0.2, b = 0.03, delta = 0.1;
  Rng rng(11);
  NoiseDraw d;
  Graph g;
  const double v = upscale_loss(linear_predictor(a, b), g.constant(x), delta, 0, s, s.T, rng, &d).value().item();
  const double ab = s.alpha_bar_at(d.t);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xn = x[i] + delta * d.pre_noise[i];
    const double xt = std::sqrt(ab) * xn + std::sqrt(1 - ab) * d.eps[i];
    acc += std::pow(d.eps[i] - (a * xt + b), 2);
  }
  EXPECT_NEAR(v, -acc / static_cast<double>(x.size()), 1e-6);
  EXPECT_NEAR(upscale_loss(oracle_for_zero_images(s), g.constant(Tensor(x.shape())), 0.0, 0, s, s.T, rng)
                  .value()
                  .item(),
              0.0, 1e-20);
  EXPECT_THROW(upscale_loss(zero_predictor(), g.constant(x), -0.1, 0, s, s.T, rng), ConfigError);
}

TEST(StyleLoss, HandEvaluatedBracket) {
  const std::vector<EncoderModel> enc = {identity_encoder()};
  // pixel stats: p (mu 1, sd 2), t (mu 0, sd 1), c (mu 3, sd 3)
  const Tensor p(Shape{1, 1, 1, 2}, std::vector<double>{-1.0, 3.0});
  const Tensor t(Shape{1, 1, 1, 2}, std::vector<double>{-1.0, 1.0});
  const Tensor c(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 6.0});
  Graph g;
  EXPECT_NEAR(style_loss(enc, g.constant(p), t, c).value().item(), -3.0, 1e-12);
  EXPECT_EQ(style_loss(enc, g.constant(p), p, p).value().item(), 0.0);
}

TEST(StyleLoss, AntisymmetricUnderTargetCleanSwap) {
  const std::vector<EncoderModel> enc = {EncoderModel::latent4(), EncoderModel::random8()};
  const Tensor p = random_images(Shape{3, 3, 8, 8}, 12);
  const Tensor t = random_images(Shape{3, 3, 8, 8}, 13);
  const Tensor c = random_images(Shape{3, 3, 8, 8}, 14);
  Graph g;
  const double fwd = style_loss(enc, g.constant(p), t, c).value().item();
  const double rev = style_loss(enc, g.constant(p), c, t).value().item();
  EXPECT_EQ(fwd, -rev);
  EXPECT_THROW(style_loss(enc, g.constant(p), t, c.slice(0, 2)), ContractError);
}

TEST(CombinedLoss, WeightsTogglesAndErrors) {
  const LossWeights w;
  EXPECT_DOUBLE_EQ(styleguard_loss(-2.0, -1.0, 0.5, w, LossToggles{}), 2.0);
  EXPECT_DOUBLE_EQ(styleguard_loss(-2.0, -1.0, 0.5, w, LossToggles{true, true, false}), -3.0);
  EXPECT_DOUBLE_EQ(styleguard_loss(-2.0, -1.0, 0.5, LossWeights{0.0, 0.0, 1.0, 0.1}, LossToggles{}), -2.0);
  EXPECT_THROW(styleguard_loss(-2.0, -1.0, 0.5, w, LossToggles{false, false, false}), ConfigError);

  Graph g;
  LossParts parts{g.constant(Tensor::scalar(-2.0)), g.constant(Tensor::scalar(-1.0)), g.constant(Tensor::scalar(0.5))};
  EXPECT_DOUBLE_EQ(styleguard_loss(parts, w, LossToggles{}).value().item(), 2.0);
  EXPECT_THROW(styleguard_loss(parts, w, LossToggles{false, false, false}), ConfigError);
}

TEST(LossGradients, MatchFiniteDifferencesOn8x8) {
  const ModelZoo& zoo = sguard::testing::tiny_zoo();
  const NoiseSchedule& s = zoo.schedule;
  const Tensor x = random_images(Shape{2, 3, 8, 8}, 15);
  const Tensor xt = random_images(Shape{2, 3, 8, 8}, 16);
  const Tensor xprior = random_images(Shape{2, 3, 8, 8}, 17);
  const Rng frozen(18);

  const std::vector<std::pair<std::string, std::function<Var(Var)>>> cases = {
      {"style", [&](Var v) { return style_loss(zoo.encoders, v, xt, x); }},
      {"upscale",
       [&](Var v) {
         Rng r = frozen;
         return upscale_loss(zoo.upscaler, v, 0.1, 0, s, r);
       }},
      {"dreambooth",
       [&](Var v) {
         Rng r = frozen;
         const BoundParams p = bind(v.graph(), zoo.base(), false);
         return dreambooth_loss(zoo.base(), p, v, v.graph().constant(xprior), 2, 1, s, 1.0, r);
       }},
      {"denoise",
       [&](Var v) {
         Rng r = frozen;
         return denoise_loss(zoo.base(), v, 2, s, r);
       }},
      {"combined",
       [&](Var v) {
         Rng r = frozen;
         LossParts parts{denoise_loss(zoo.base(), v, 2, s, r), upscale_loss(zoo.purifier, v, 0.1, 0, s, r),
                         ag::scale(style_loss(zoo.encoders, v, xt, x), -1.0)};
         return styleguard_loss(parts, LossWeights{}, LossToggles{});
       }},
  };
  for (const auto& [name, f] : cases) {
    // Evaluate away from x_c so the style term has a non-degenerate gradient.
    const Tensor at = random_images(x.shape(), 19);
    const auto r = check_gradient([&](const Tensor& t) { return evaluate(f, t); }, at, autodiff_gradient(f, at));
    EXPECT_LT(r.rel_error, 1e-3) << name;
  }
}

TEST(LossDeterminism, FrozenRngIsBitwiseRepeatable) {
  const ModelZoo& zoo = sguard::testing::tiny_zoo();
  const Tensor x = random_images(Shape{2, 3, 8, 8}, 20);
  Rng a(21), b(21);
  Graph g1, g2;
  EXPECT_EQ(denoise_loss(zoo.base(), g1.constant(x), 2, zoo.schedule, a).value().item(),
            denoise_loss(zoo.base(), g2.constant(x), 2, zoo.schedule, b).value().item());
}
