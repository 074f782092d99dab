#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "styleguard/autograd.hpp"
#include "styleguard/diffusion.hpp"
#include "styleguard/errors.hpp"
#include "styleguard/rng.hpp"

namespace sguard {

// ---------------------------------------------------------------------------
// Random transformations (EoT pool and evaluation-time attacks)
// ---------------------------------------------------------------------------

enum class TransformKind { identity, gaussian_noise, center_crop_resize, horizontal_flip, gaussian_blur };

struct TransformSpec {
  TransformKind kind = TransformKind::identity;
  double sigma = 0.05;  // gaussian_noise
  double ratio = 0.8;   // center_crop_resize
  int kernel = 7;       // gaussian_blur

  static TransformSpec identity() { return {}; }
  static TransformSpec noise(double sigma) { return {TransformKind::gaussian_noise, sigma}; }
  static TransformSpec crop(double ratio) { return {TransformKind::center_crop_resize, 0.05, ratio}; }
  static TransformSpec flip() { return {TransformKind::horizontal_flip}; }
  static TransformSpec blur(int kernel) { return {TransformKind::gaussian_blur, 0.05, 0.8, kernel}; }

  void validate() const {
    switch (kind) {
      case TransformKind::gaussian_noise:
        if (!(sigma >= 0)) throw ConfigError("gaussian_noise sigma must be >= 0");
        break;
      case TransformKind::center_crop_resize:
        if (!(ratio > 0 && ratio <= 1)) throw ConfigError("crop ratio must lie in (0, 1]");
        break;
      case TransformKind::gaussian_blur:
        if (kernel < 1 || kernel % 2 == 0) throw ConfigError("blur kernel must be odd and positive");
        break;
      default:
        break;
    }
  }

  [[nodiscard]] std::string name() const {
    std::ostringstream os;
    switch (kind) {
      case TransformKind::identity: return "identity";
      case TransformKind::gaussian_noise: os << "gaussian_noise(" << sigma << ")"; break;
      case TransformKind::center_crop_resize: os << "crop_resize(" << ratio << ")"; break;
      case TransformKind::horizontal_flip: return "hflip";
      case TransformKind::gaussian_blur: os << "gaussian_blur(" << kernel << ")"; break;
    }
    return os.str();
  }
};

inline std::vector<double> gaussian_kernel(int size) {
  // Same sigma rule OpenCV uses when sigma is derived from the kernel size.
  const double sigma = 0.3 * ((size - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> k(static_cast<std::size_t>(size));
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= total;
  return k;
}

/// Differentiable g(x). Output keeps the input's shape and stays in [0,1].
inline Var apply_transform(const TransformSpec& spec, Var x, Rng& rng) {
  spec.validate();
  const Shape s = x.shape();
  switch (spec.kind) {
    case TransformKind::identity:
      return x;
    case TransformKind::gaussian_noise: {
      if (spec.sigma == 0.0) return x;
      Tensor n = rng.normal_tensor(s) * spec.sigma;
      return ag::clamp(ag::add(x, x.graph().constant(std::move(n))), 0.0, 1.0);
    }
    case TransformKind::center_crop_resize: {
      const int ch = std::max(1, static_cast<int>(std::lround(s.h * spec.ratio)));
      const int cw = std::max(1, static_cast<int>(std::lround(s.w * spec.ratio)));
      return ag::crop_resize(x, (s.h - ch) / 2, (s.w - cw) / 2, ch, cw, s.h, s.w);
    }
    case TransformKind::horizontal_flip:
      return ag::hflip(x);
    case TransformKind::gaussian_blur:
      return ag::separable_filter(x, gaussian_kernel(spec.kernel));
  }
  return x;
}

inline Tensor apply_transform(const TransformSpec& spec, const Tensor& x, Rng& rng) {
  Graph g;
  return apply_transform(spec, g.constant(x), rng).value();
}

/// Uniform draw from a non-empty pool.
inline const TransformSpec& sample_transform(std::span<const TransformSpec> pool, Rng& rng) {
  if (pool.empty()) throw ConfigError("sample_transform: empty transform pool");
  return pool[static_cast<std::size_t>(rng.integer(0, static_cast<int>(pool.size()) - 1))];
}

// ---------------------------------------------------------------------------
// Diffusion-based purifiers
// ---------------------------------------------------------------------------

enum class PurifierKind { diffpure, noise_upscale };

struct PurifierSpec {
  PurifierKind kind = PurifierKind::diffpure;
  int steps = 5;              // diffpure: noising depth t*
  double noise_sigma = 0.1;   // noise_upscale: Gaussian pre-noise
  std::string model_id = "purifier";

  [[nodiscard]] std::string name() const {
    std::ostringstream os;
    if (kind == PurifierKind::diffpure) {
      os << "diffpure(" << steps << ")";
    } else {
      os << "noise_upscale(" << noise_sigma << ")";
    }
    if (model_id != "purifier" && model_id != "upscaler") os << "@" << model_id;
    return os.str();
  }
};

namespace detail {

/// Deterministic (DDIM, eta = 0) reverse chain from x_t at step `from` down to 0.
inline Var ddim_to_zero(const DenoiserModel& m, const BoundParams& p, Var x, int from,
                        const NoiseSchedule& sched) {
  for (int t = from; t >= 1; --t) {
    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_or_one(t - 1);
    Var eps = predict_noise(m, p, x, t, token::unconditional);
    Var x0 = ag::scale(ag::sub(x, ag::scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
    x = t == 1 ? x0
               : ag::add(ag::scale(x0, std::sqrt(ab_prev)), ag::scale(eps, std::sqrt(1.0 - ab_prev)));
  }
  return x;
}

}  // namespace detail

/// Noise to t* = steps, then run the model's deterministic reverse chain back
/// to t = 0. Differentiable in x.
inline Var diffpure(Var x, int steps, const DenoiserModel& model, const NoiseSchedule& sched, Rng& rng) {
  if (steps < 0 || steps > sched.T) throw ConfigError("diffpure: steps outside [0, T]");
  if (steps == 0) return x;
  Graph& g = x.graph();
  const BoundParams p = bind(g, model, false);
  Var eps = g.constant(rng.normal_tensor(x.shape()));
  Var x_t = forward_diffuse(x, steps, eps, sched);
  return ag::clamp(detail::ddim_to_zero(model, p, x_t, steps, sched), 0.0, 1.0);
}

/// Timestep whose noise level best matches additive noise of std `sigma`
/// once the image is scaled by sqrt(alpha_bar), limited to [1, t_max].
inline int matching_timestep(double sigma, const NoiseSchedule& sched, int t_max) {
  const double target = 1.0 / (1.0 + sigma * sigma);
  int best = 1;
  for (int t = 1; t <= t_max; ++t) {
    if (std::abs(sched.alpha_bar_at(t) - target) < std::abs(sched.alpha_bar_at(best) - target)) best = t;
  }
  return best;
}

/// x' = clamp(x + sigma N(0,1)); x' is then treated as a diffusion state at the
/// matching noise level and denoised by the upscaler (a 2x-resolution body
/// followed by area downsampling, so the output keeps the input's size).
inline Var noise_upscale(Var x, double noise_sigma, const DenoiserModel& upscaler,
                         const NoiseSchedule& sched, Rng& rng) {
  if (noise_sigma < 0) throw ConfigError("noise_upscale: noise_sigma must be >= 0");
  Graph& g = x.graph();
  Var noisy = x;
  if (noise_sigma > 0) {
    noisy = ag::clamp(ag::add(x, g.constant(rng.normal_tensor(x.shape()) * noise_sigma)), 0.0, 1.0);
  }
  const int s = matching_timestep(noise_sigma, sched, upscaler.trained_max_t(sched));
  const BoundParams p = bind(g, upscaler, false);
  Var x_s = ag::scale(noisy, std::sqrt(sched.alpha_bar_at(s)));
  return ag::clamp(detail::ddim_to_zero(upscaler, p, x_s, s, sched), 0.0, 1.0);
}

inline Tensor diffpure(const Tensor& x, int steps, const DenoiserModel& model, const NoiseSchedule& sched,
                       Rng& rng) {
  Graph g;
  return diffpure(g.constant(x), steps, model, sched, rng).value();
}

inline Tensor noise_upscale(const Tensor& x, double noise_sigma, const DenoiserModel& upscaler,
                            const NoiseSchedule& sched, Rng& rng) {
  Graph g;
  return noise_upscale(g.constant(x), noise_sigma, upscaler, sched, rng).value();
}

/// Dispatch on spec.kind with the model already resolved.
inline Tensor purify(const PurifierSpec& spec, const Tensor& x, const DenoiserModel& model,
                     const NoiseSchedule& sched, Rng& rng) {
  if (spec.kind == PurifierKind::diffpure) return diffpure(x, spec.steps, model, sched, rng);
  return noise_upscale(x, spec.noise_sigma, model, sched, rng);
}

/// Preprocessing an adversary may apply before fine-tuning.
using AttackSpec = std::variant<TransformSpec, PurifierSpec>;

inline std::string attack_name(const AttackSpec& a) {
  return std::visit([](const auto& s) { return s.name(); }, a);
}

}  // namespace sguard
