#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "styleguard/autograd.hpp"
#include "styleguard/errors.hpp"
#include "styleguard/rng.hpp"
#include "styleguard/transforms.hpp"

namespace sguard {

/// Clamp x into the L-inf ball of radius `budget` around x_orig, then into [0,1].
inline Tensor project_linf(const Tensor& x, const Tensor& x_orig, double budget) {
  x.check_same(x_orig);
  if (budget < 0) throw ConfigError("project_linf: budget must be >= 0");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(x[i], x_orig[i] - budget, x_orig[i] + budget);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

inline double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

struct PerturbationState {
  Tensor x_orig;  // pristine anchor, never modified
  Tensor x_adv;
  double budget = 8.0 / 255.0;
  double step_size = 0.005;
  int steps_done = 0;

  static PerturbationState start(const Tensor& x_orig, double budget, double step_size) {
    if (budget < 0 || !(step_size > 0)) throw ConfigError("PGD needs budget >= 0 and step > 0");
    return PerturbationState{x_orig, x_orig, budget, step_size, 0};
  }

  /// Largest |x_adv - x_orig|.
  [[nodiscard]] double linf() const { return max_abs_diff(x_adv, x_orig); }

  [[nodiscard]] bool invariants_hold() const {
    if (linf() > budget + 1e-9) return false;
    return std::all_of(x_adv.vec().begin(), x_adv.vec().end(),
                       [](double v) { return v >= 0.0 && v <= 1.0; });
  }
};

/// Scalar objective of a (transformed) image batch, maximized by PGD.
using Objective = std::function<Var(Var x)>;

/// One sign-gradient ascent step on the gradient averaged over J transforms
/// drawn from the pool. Gradients flow through g back to the untransformed x_adv; projection
/// is applied once, in pixel space.
inline PerturbationState pgd_step(const PerturbationState& state, const Objective& objective,
                                  std::span<const TransformSpec> pool, int J, Rng& rng) {
  if (J < 1) throw ConfigError("pgd_step: J must be >= 1");
  Tensor direction(state.x_adv.shape());
  for (int j = 0; j < J; ++j) {
    Graph g;
    Var x = g.input(state.x_adv);
    const TransformSpec& spec = sample_transform(pool, rng);
    Var loss = objective(apply_transform(spec, x, rng));
    if (loss.value().size() != 1) throw ContractError("pgd_step: objective must be scalar");
    if (!std::isfinite(loss.value().item())) throw NumericError("pgd_step: non-finite objective");
    g.backward(loss);
    const Tensor grad = g.grad(x);
    if (!all_finite(grad)) throw NumericError("pgd_step: non-finite gradient");
    for (std::size_t i = 0; i < grad.size(); ++i) direction[i] += grad[i];
  }
  PerturbationState next = state;
  Tensor moved = state.x_adv;
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += state.step_size * sign(direction[i]);
  next.x_adv = project_linf(moved, state.x_orig, state.budget);
  ++next.steps_done;
  return next;
}

inline PerturbationState run_pgd(PerturbationState state, const Objective& objective, int K2,
                                 std::span<const TransformSpec> pool, int J, Rng& rng) {
  if (K2 < 1) throw ConfigError("run_pgd: K2 must be >= 1");
  for (int k = 0; k < K2; ++k) state = pgd_step(state, objective, pool, J, rng);
  return state;
}

}  // namespace sguard
