#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "styleguard/autograd.hpp"
#include "styleguard/diffusion.hpp"
#include "styleguard/errors.hpp"
#include "styleguard/losses.hpp"
#include "styleguard/optim.hpp"
#include "styleguard/pgd.hpp"
#include "styleguard/transforms.hpp"

namespace sguard {

// ---------------------------------------------------------------------------
// Lower level: surrogate fine-tuning
// ---------------------------------------------------------------------------

/// Scalar training loss given the model's parameters placed on a graph.
using ParamLoss = std::function<Var(Graph&, const BoundParams&, Rng&)>;

/// `steps` plain gradient steps theta <- theta - lr * grad on `m.params()`.
/// Returns the loss before each step.
template <class Model>
std::vector<double> sgd_finetune(Model& m, const ParamLoss& loss, int steps, double lr, Rng& rng) {
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  for (int s = 0; s < steps; ++s) {
    Graph g;
    BoundParams p;
    for (const Tensor& t : m.params()) p.vars.push_back(g.input(t));
    Var l = loss(g, p, rng);
    const double value = l.value().item();
    if (!std::isfinite(value)) throw NumericError("fine-tuning loss is not finite");
    g.backward(l);
    std::vector<Tensor> grads;
    grads.reserve(p.vars.size());
    for (const Var& v : p.vars) grads.push_back(g.grad(v));
    sgd_step(m.params(), grads, lr);
    trace.push_back(value);
  }
  return trace;
}

/// Fine-tune a copy for K1 steps; `theta` itself is left untouched.
template <class Model>
Model lookahead_finetune(const Model& theta, const ParamLoss& loss, int K1, double beta_lr, Rng& rng) {
  if (K1 < 1) throw ConfigError("lookahead_finetune: K1 must be >= 1");
  Model copy = theta;
  sgd_finetune(copy, loss, K1, beta_lr, rng);
  return copy;
}

/// Same update rule as lookahead_finetune, applied to theta in place.
template <class Model>
void update_surrogate(Model& theta, const ParamLoss& loss, int K1, double beta_lr, Rng& rng) {
  if (K1 < 1) throw ConfigError("update_surrogate: K1 must be >= 1");
  sgd_finetune(theta, loss, K1, beta_lr, rng);
}

/// DreamBooth objective on fixed instance/prior batches for models with
/// `arch`-compatible parameters.
inline ParamLoss dreambooth_objective(const DenoiserModel& arch_ref, Tensor x_inst, Tensor x_prior, int c,
                                      int c_pr, const NoiseSchedule& sched, double lam_prior) {
  return [&arch_ref, x_inst = std::move(x_inst), x_prior = std::move(x_prior), c, c_pr, &sched,
          lam_prior](Graph& g, const BoundParams& p, Rng& rng) {
    return dreambooth_loss(arch_ref, p, g.constant(x_inst), g.constant(x_prior), c, c_pr, sched,
                           lam_prior, rng);
  };
}

// ---------------------------------------------------------------------------
// Orchestrator
// ---------------------------------------------------------------------------

struct ProtectionConfig {
  int N = 100;
  int K1 = 3;
  int K2 = 6;
  double alpha = 0.005;
  double budget = 8.0 / 255.0;
  double beta_lr = 5e-3;
  LossWeights weights;
  LossToggles toggles;
  /// Multiplies the style term before it enters the ascent objective; -1
  /// pulls statistics toward the target and away from the clean images.
  double style_sign = -1.0;
  int J = 1;
  std::vector<TransformSpec> transform_pool{TransformSpec::identity()};
  int instance_token = token::instance;
  int prior_token = token::class_prompt;
  std::uint64_t seed = 0;

  void validate() const {
    if (N < 1 || K1 < 1 || K2 < 1 || J < 1) throw ConfigError("N, K1, K2 and J must be >= 1");
    if (!(alpha > 0) || !(beta_lr > 0) || budget < 0) {
      throw ConfigError("alpha and beta_lr must be > 0, budget >= 0");
    }
    if (style_sign != 1.0 && style_sign != -1.0) throw ConfigError("style_sign must be +1 or -1");
    if (!toggles.any()) throw ConfigError("at least one loss term must be enabled");
    if (transform_pool.empty()) throw ConfigError("transform pool must be non-empty");
    for (const TransformSpec& t : transform_pool) t.validate();
    weights.validate();
  }
};

/// Models the defender optimizes against. Surrogates are owned (they are
/// updated during the run); purifiers and encoders are read-only.
struct Ensemble {
  std::vector<DenoiserModel> surrogates;
  std::vector<const DenoiserModel*> purifiers;
  std::vector<EncoderModel> encoders;
};

struct LossTraceRow {
  double denoise = 0.0;
  double upscale = 0.0;
  double style = 0.0;
  double total = 0.0;
};

struct RunArtifacts {
  Tensor x_protected;
  std::vector<LossTraceRow> loss_trace;
  std::vector<DenoiserModel> surrogate_checkpoints;
  ProtectionConfig config_echo;
  bool complete = true;
  std::string error;
};

/// Round-robin over [0, n) with a fresh shuffle at every epoch.
class ShuffledCycle {
 public:
  ShuffledCycle(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    pos_ = n;
  }
  std::size_t next() {
    if (order_.empty()) throw ConfigError("cannot sample from an empty ensemble");
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_.engine());
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

/// Alternating look-ahead fine-tuning, PGD crafting on the combined
/// objective, and surrogate updates, for N outer iterations.
inline RunArtifacts run_styleguard(const ProtectionConfig& cfg, const Tensor& x_clean, const Tensor& x_target,
                                   Ensemble ensemble, const NoiseSchedule& sched,
                                   const std::function<void(int, const LossTraceRow&)>& on_iteration = {}) {
  cfg.validate();
  if (x_clean.shape().n < 1 || x_target.shape().n < 1) throw ContractError("clean and target sets must be non-empty");
  if (ensemble.surrogates.empty()) throw ConfigError("need at least one surrogate model");
  if (cfg.toggles.upscale && ensemble.purifiers.empty()) throw ConfigError("upscale term needs purifiers");
  if (cfg.toggles.style && ensemble.encoders.empty()) throw ConfigError("style term needs encoders");

  RunArtifacts out;
  out.config_echo = cfg;
  Rng rng(derive_seed(cfg.seed, "styleguard"));
  ShuffledCycle pick_surrogate(ensemble.surrogates.size(), rng.fork("surrogate-order"));
  ShuffledCycle pick_purifier(std::max<std::size_t>(ensemble.purifiers.size(), 1), rng.fork("purifier-order"));

  const Tensor x_prior = sample_reverse(ensemble.surrogates.front(), sched, cfg.prior_token, x_clean.shape().n,
                                        x_clean.shape().h, x_clean.shape().w, derive_seed(cfg.seed, "prior"));

  PerturbationState state = PerturbationState::start(x_clean, cfg.budget, cfg.alpha);
  try {
    for (int i = 0; i < cfg.N; ++i) {
      DenoiserModel& theta = ensemble.surrogates[pick_surrogate.next()];
      const DenoiserModel* theta_T =
          ensemble.purifiers.empty() ? nullptr : ensemble.purifiers[pick_purifier.next()];

      const DenoiserModel theta_ahead = lookahead_finetune(
          theta,
          dreambooth_objective(theta, state.x_adv, x_prior, cfg.instance_token, cfg.prior_token, sched,
                               cfg.weights.lam_prior),
          cfg.K1, cfg.beta_lr, rng);

      LossTraceRow acc;
      int evals = 0;
      const Objective objective = [&](Var xg) {
        LossParts parts;
        LossTraceRow row;
        if (cfg.toggles.denoise) {
          parts.denoise = denoise_loss(theta_ahead, xg, cfg.instance_token, sched, rng);
          row.denoise = parts.denoise.value().item();
        }
        if (cfg.toggles.upscale) {
          parts.upscale = upscale_loss(*theta_T, xg, cfg.weights.delta_noise, token::unconditional, sched, rng);
          row.upscale = parts.upscale.value().item();
        }
        if (cfg.toggles.style) {
          Var style = style_loss(ensemble.encoders, xg, x_target, x_clean);
          row.style = style.value().item();
          parts.style = ag::scale(style, cfg.style_sign);
        }
        Var total = styleguard_loss(parts, cfg.weights, cfg.toggles);
        acc.denoise += row.denoise;
        acc.upscale += row.upscale;
        acc.style += row.style;
        acc.total += total.value().item();
        ++evals;
        return total;
      };
      state = run_pgd(state, objective, cfg.K2, cfg.transform_pool, cfg.J, rng);
      if (!state.invariants_hold()) throw NumericError("budget invariant violated");

      update_surrogate(theta,
                       dreambooth_objective(theta, state.x_adv, x_prior, cfg.instance_token, cfg.prior_token,
                                            sched, cfg.weights.lam_prior),
                       cfg.K1, cfg.beta_lr, rng);

      const double inv = 1.0 / std::max(evals, 1);
      LossTraceRow row{acc.denoise * inv, acc.upscale * inv, acc.style * inv, acc.total * inv};
      out.loss_trace.push_back(row);
      if (on_iteration) on_iteration(i, row);
    }
  } catch (const Error& e) {
    out.complete = false;
    out.error = e.what();
  }
  out.x_protected = state.x_adv;
  out.surrogate_checkpoints = std::move(ensemble.surrogates);
  return out;
}

}  // namespace sguard
