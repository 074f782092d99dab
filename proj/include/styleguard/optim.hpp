#pragma once

#include <cmath>
#include <vector>

#include "styleguard/errors.hpp"
#include "styleguard/tensor.hpp"

namespace sguard {

/// theta <- theta - lr * grad, for every tensor with `active[i]` set.
inline void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr,
                     const std::vector<bool>& active = {}) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active.empty() && !active[i]) continue;
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
}

/// Adam with bias correction. Inactive tensors are left bitwise untouched.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
            const std::vector<bool>& active = {}) {
    if (m_.empty()) {
      for (const Tensor& p : params) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!active.empty() && !active[i]) continue;
      Tensor& p = params[i];
      const Tensor& g = grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
        v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
        p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace sguard
