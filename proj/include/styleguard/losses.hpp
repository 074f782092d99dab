#pragma once

#include <functional>
#include <span>
#include <vector>

#include "styleguard/autograd.hpp"
#include "styleguard/diffusion.hpp"
#include "styleguard/errors.hpp"
#include "styleguard/rng.hpp"

namespace sguard {

/// Weights of the combined objective and of DreamBooth prior preservation.
struct LossWeights {
  double eta = 1.0;          // upscale term
  double lam = 10.0;         // style term
  double lam_prior = 1.0;    // prior-preservation term of the fine-tuning loss
  double delta_noise = 0.1;  // std of the Gaussian pre-noise in the upscale term

  void validate() const {
    if (eta < 0 || lam < 0 || lam_prior < 0 || delta_noise < 0) {
      throw ConfigError("loss weights must be non-negative");
    }
  }
};

/// Which terms of the combined objective are active (ablation rows).
struct LossToggles {
  bool denoise = true;
  bool upscale = true;
  bool style = true;

  [[nodiscard]] bool any() const { return denoise || upscale || style; }
};

/// Noise-prediction callable: (x_t, t, token) -> eps estimate.
using NoisePredictor = std::function<Var(Var x_t, int t, int token)>;

inline NoisePredictor predictor_for(const DenoiserModel& m, const BoundParams& p) {
  return [&m, &p](Var x_t, int t, int c) { return predict_noise(m, p, x_t, t, c); };
}

/// Random quantities consumed by one loss evaluation, for replay in tests.
struct NoiseDraw {
  int t = 0;
  Tensor eps;
  Tensor pre_noise;  // upscale term only
};

namespace detail {

inline void draw(Rng& rng, int t_max, Shape shape, NoiseDraw& d) {
  d.t = rng.integer(1, t_max);
  d.eps = rng.normal_tensor(shape);
}

/// ||eps - eps_theta(x_t, t, c)||^2 averaged over elements.
inline Var denoising_error(const NoisePredictor& predict, Var x0, int c, const NoiseSchedule& sched,
                           const NoiseDraw& d) {
  Graph& g = x0.graph();
  Var eps = g.constant(d.eps);
  Var x_t = forward_diffuse(x0, d.t, eps, sched);
  return ag::mse(eps, predict(x_t, d.t, c));
}

}  // namespace detail

/// DreamBooth fine-tuning loss: instance denoising error on token `c` plus
/// lam_prior times the prior-preservation error on `c_pr`, each from an
/// independent (t, eps) draw. Draw order: (t, eps) then (t', eps').
inline Var dreambooth_loss(const NoisePredictor& predict, Var x_inst, Var x_prior, int c, int c_pr,
                           const NoiseSchedule& sched, double lam_prior, Rng& rng,
                           NoiseDraw* inst_draw = nullptr, NoiseDraw* prior_draw = nullptr) {
  if (x_inst.shape().n < 1 || x_prior.shape().n < 1) {
    throw ContractError("dreambooth_loss needs non-empty instance and prior batches");
  }
  if (c == c_pr) throw ContractError("dreambooth_loss needs distinct instance and prior tokens");
  NoiseDraw di, dp;
  detail::draw(rng, sched.T, x_inst.shape(), di);
  detail::draw(rng, sched.T, x_prior.shape(), dp);
  Var inst = detail::denoising_error(predict, x_inst, c, sched, di);
  Var prior = detail::denoising_error(predict, x_prior, c_pr, sched, dp);
  if (inst_draw) *inst_draw = di;
  if (prior_draw) *prior_draw = dp;
  return ag::add(inst, ag::scale(prior, lam_prior));
}

inline Var dreambooth_loss(const DenoiserModel& m, const BoundParams& p, Var x_inst, Var x_prior,
                           int c, int c_pr, const NoiseSchedule& sched, double lam_prior, Rng& rng) {
  m.check_token(c);
  m.check_token(c_pr);
  return dreambooth_loss(predictor_for(m, p), x_inst, x_prior, c, c_pr, sched, lam_prior, rng);
}

/// Instance term only (textual-inversion objective).
inline Var instance_loss(const NoisePredictor& predict, Var x_inst, int c, const NoiseSchedule& sched,
                         Rng& rng) {
  NoiseDraw d;
  detail::draw(rng, sched.T, x_inst.shape(), d);
  return detail::denoising_error(predict, x_inst, c, sched, d);
}

/// Negative denoising error of one surrogate, t uniform on [1, t_max].
inline Var denoise_loss(const NoisePredictor& predict, Var x_p, int c, const NoiseSchedule& sched,
                        int t_max, Rng& rng, NoiseDraw* rec = nullptr) {
  NoiseDraw d;
  detail::draw(rng, t_max, x_p.shape(), d);
  Var err = detail::denoising_error(predict, x_p, c, sched, d);
  if (rec) *rec = std::move(d);
  return ag::scale(err, -1.0);
}

inline Var denoise_loss(const DenoiserModel& m, Var x_p, int c, const NoiseSchedule& sched, Rng& rng,
                        NoiseDraw* rec = nullptr) {
  m.check_token(c);
  const BoundParams p = bind(x_p.graph(), m, false);
  return denoise_loss(predictor_for(m, p), x_p, c, sched, m.trained_max_t(sched), rng, rec);
}

/// Ensemble form: one member drawn uniformly, then a single-sample estimate.
inline Var denoise_loss(std::span<const DenoiserModel* const> ensemble, Var x_p, int c,
                        const NoiseSchedule& sched, Rng& rng) {
  if (ensemble.empty()) throw ConfigError("denoise_loss: empty surrogate ensemble");
  const auto k = static_cast<std::size_t>(rng.integer(0, static_cast<int>(ensemble.size()) - 1));
  return denoise_loss(*ensemble[k], x_p, c, sched, rng);
}

/// Negative denoising error of a purifier at x_p + delta * N(0,1). The
/// (t, eps) draw precedes the pre-noise draw, and no pre-noise is drawn when
/// delta is zero, so delta = 0 replays denoise_loss exactly.
inline Var upscale_loss(const NoisePredictor& predict, Var x_p, double delta_noise, int c,
                        const NoiseSchedule& sched, int t_max, Rng& rng, NoiseDraw* rec = nullptr) {
  if (delta_noise < 0) throw ConfigError("upscale_loss: delta_noise must be >= 0");
  NoiseDraw d;
  detail::draw(rng, t_max, x_p.shape(), d);
  Var x = x_p;
  if (delta_noise > 0) {
    d.pre_noise = rng.normal_tensor(x_p.shape());
    x = ag::add(x_p, x_p.graph().constant(d.pre_noise * delta_noise));
  }
  Var err = detail::denoising_error(predict, x, c, sched, d);
  if (rec) *rec = std::move(d);
  return ag::scale(err, -1.0);
}

inline Var upscale_loss(const DenoiserModel& purifier, Var x_p, double delta_noise, int c,
                        const NoiseSchedule& sched, Rng& rng, NoiseDraw* rec = nullptr) {
  purifier.check_token(c);
  const BoundParams p = bind(x_p.graph(), purifier, false);
  return upscale_loss(predictor_for(purifier, p), x_p, delta_noise, c, sched,
                      purifier.trained_max_t(sched), rng, rec);
}

inline Var upscale_loss(std::span<const DenoiserModel* const> purifiers, Var x_p, double delta_noise,
                        int c, const NoiseSchedule& sched, Rng& rng) {
  if (purifiers.empty()) throw ConfigError("upscale_loss: empty purifier ensemble");
  const auto k = static_cast<std::size_t>(rng.integer(0, static_cast<int>(purifiers.size()) - 1));
  return upscale_loss(*purifiers[k], x_p, delta_noise, c, sched, rng);
}

/// Style loss: mean over encoders and over pairs (x_p[i], x_t[i mod |X_t|]),
/// with x_c paired index-wise, of
///   |mu_p - mu_t|^2 + |sd_p - sd_t|^2 - |mu_p - mu_c|^2 - |sd_p - sd_c|^2.
inline Var style_loss(std::span<const EncoderModel> encoders, Var x_p, const Tensor& x_t,
                      const Tensor& x_c) {
  if (encoders.empty()) throw ConfigError("style_loss: empty encoder set");
  const Shape ps = x_p.shape();
  if (ps.n < 1 || x_t.shape().n < 1) throw ContractError("style_loss: empty batch");
  if (x_c.shape() != ps) throw ContractError("style_loss: clean batch must pair index-wise with x_p");
  if (x_t.shape().c != ps.c) throw ContractError("style_loss: target channel mismatch");
  Graph& g = x_p.graph();

  // Stack per-image stats of `stats` so that row i pairs with x_p[i].
  auto paired = [&](const std::vector<LatentStats>& stats, int channels, bool want_mu) {
    Tensor out(Shape{ps.n, channels, 1, 1});
    for (int i = 0; i < ps.n; ++i) {
      const LatentStats& s = stats[static_cast<std::size_t>(i) % stats.size()];
      const std::vector<double>& v = want_mu ? s.mu : s.sigma;
      std::copy(v.begin(), v.end(), out.data() + static_cast<std::size_t>(i) * channels);
    }
    return out;
  };

  Var total;
  for (const EncoderModel& f : encoders) {
    Var lat = encode(f, x_p);
    if (lat.shape().plane() < 2) throw DegenerateInputError("style_loss: latent too small");
    Var mu = ag::channel_mean(lat);
    Var sd = ag::channel_std(lat);
    const int ch = lat.shape().c;
    const auto st = feature_stats(encode(f, x_t));
    const auto sc = feature_stats(encode(f, x_c));
    Var to_target = ag::add(ag::sum(ag::square(ag::sub(mu, g.constant(paired(st, ch, true))))),
                            ag::sum(ag::square(ag::sub(sd, g.constant(paired(st, ch, false))))));
    Var to_clean = ag::add(ag::sum(ag::square(ag::sub(mu, g.constant(paired(sc, ch, true))))),
                           ag::sum(ag::square(ag::sub(sd, g.constant(paired(sc, ch, false))))));
    Var term = ag::scale(ag::sub(to_target, to_clean), 1.0 / ps.n);
    total = total.valid() ? ag::add(total, term) : term;
  }
  return ag::scale(total, 1.0 / static_cast<double>(encoders.size()));
}

/// The three parts of the combined objective; unset parts are treated as 0.
struct LossParts {
  Var denoise;
  Var upscale;
  Var style;
};

/// L = denoise + eta * upscale + lam * style over the enabled terms.
inline Var styleguard_loss(const LossParts& parts, const LossWeights& w, const LossToggles& on) {
  if (!on.any()) throw ConfigError("styleguard_loss: every loss term is disabled");
  Var total;
  auto add = [&total](Var term) { total = total.valid() ? ag::add(total, term) : term; };
  auto need = [](const Var& v, const char* name) {
    if (!v.valid()) throw ContractError(std::string("styleguard_loss: missing enabled part ") + name);
  };
  if (on.denoise) {
    need(parts.denoise, "denoise");
    add(parts.denoise);
  }
  if (on.upscale) {
    need(parts.upscale, "upscale");
    add(ag::scale(parts.upscale, w.eta));
  }
  if (on.style) {
    need(parts.style, "style");
    add(ag::scale(parts.style, w.lam));
  }
  return total;
}

inline double styleguard_loss(double denoise, double upscale, double style, const LossWeights& w,
                              const LossToggles& on) {
  if (!on.any()) throw ConfigError("styleguard_loss: every loss term is disabled");
  double total = 0.0;
  if (on.denoise) total += denoise;
  if (on.upscale) total += w.eta * upscale;
  if (on.style) total += w.lam * style;
  return total;
}

}  // namespace sguard
