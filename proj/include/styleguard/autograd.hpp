#pragma once

// Tape-based reverse-mode differentiation over NCHW tensors. Ops are coarse
// (whole-batch convolutions, pooling, statistics), so the per-node overhead
// of std::function is negligible next to the arithmetic.

#include <Eigen/Core>
#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "styleguard/errors.hpp"
#include "styleguard/tensor.hpp"

namespace sguard::ag {

class Graph;

class Var {
 public:
  Var() = default;

  [[nodiscard]] Graph& graph() const { return *g_; }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] bool valid() const { return g_ != nullptr; }
  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool needs_grad() const;

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor v) { return push(std::move(v), false, {}); }
  /// Leaf whose gradient is accumulated by backward().
  Var input(Tensor v) { return push(std::move(v), true, {}); }

  /// Node produced by an op. The backward closure is dropped when no input
  /// needs a gradient.
  Var record(Tensor v, std::initializer_list<Var> inputs, Backward back) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].needs_grad;
    return push(std::move(v), needs, needs ? std::move(back) : Backward{});
  }

  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Accumulated gradient; zeros if nothing reached this node.
  [[nodiscard]] Tensor grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
  }

  /// Mutable gradient buffer for `v`, allocated on first touch. Ops use this
  /// from their backward closures.
  Tensor& grad_buffer(Var v) {
    Node& n = nodes_[v.id()];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void accumulate(Var v, const Tensor& g) {
    if (!nodes_[v.id()].needs_grad) return;
    grad_buffer(v) += g;
  }

  /// Reverse sweep from a scalar root.
  void backward(Var root) {
    Node& r = nodes_[root.id()];
    if (r.value.size() != 1) throw ContractError("backward() root must be a scalar");
    if (!r.needs_grad) return;
    grad_buffer(root).fill(1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.empty()) continue;
      // The closure may touch other nodes; keep a reference to the stable deque slot.
      n.back(*this, n.grad);
    }
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward back;
  };

  Var push(Tensor v, bool needs, Backward back) {
    nodes_.push_back(Node{std::move(v), Tensor{}, needs, std::move(back)});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return g_->value(id_); }
inline bool Var::needs_grad() const { return g_->needs_grad(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require_same(const Var& a, const Var& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                        b.shape().str());
  }
}

inline int out_extent(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// Unfold one sample [C,H,W] into columns [C*k*k, Ho*Wo].
inline void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int ho,
                   int wo, double* col) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im(const double* col, int c, int h, int w, int k, int stride, int pad, int ho,
                   int wo, double* x) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace detail

// ---- elementwise ---------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::require_same(a, b, "add");
  return a.graph().record(a.value() + b.value(), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same(a, b, "sub");
  return a.graph().record(a.value() - b.value(), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    if (b.needs_grad()) g.grad_buffer(b) -= go;
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (a.needs_grad()) {
      Tensor& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.value()[i];
    }
    if (b.needs_grad()) {
      Tensor& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.value()[i];
    }
  });
}

inline Var scale(Var a, double s) {
  return a.graph().record(a.value() * s, {a}, [a, s](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  });
}

inline Var add_scalar(Var a, double s) {
  return a.graph().record(detail::map(a.value(), [s](double v) { return v + s; }), {a},
                          [a](Graph& g, const Tensor& go) { g.accumulate(a, go); });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

inline Var square(Var a) {
  return a.graph().record(detail::map(a.value(), [](double v) { return v * v; }), {a},
                          [a](Graph& g, const Tensor& go) {
                            Tensor& ga = g.grad_buffer(a);
                            for (std::size_t i = 0; i < go.size(); ++i)
                              ga[i] += 2.0 * a.value()[i] * go[i];
                          });
}

inline Var silu(Var a) {
  return a.graph().record(
      detail::map(a.value(), [](double v) { return v / (1.0 + std::exp(-v)); }), {a},
      [a](Graph& g, const Tensor& go) {
        Tensor& ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < go.size(); ++i) {
          const double v = a.value()[i];
          const double s = 1.0 / (1.0 + std::exp(-v));
          ga[i] += go[i] * (s * (1.0 + v * (1.0 - s)));
        }
      });
}

inline Var tanh(Var a) {
  Tensor out = detail::map(a.value(), [](double v) { return std::tanh(v); });
  const Tensor y = out;
  return a.graph().record(std::move(out), {a}, [a, y](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var relu(Var a) {
  return a.graph().record(detail::map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                          [a](Graph& g, const Tensor& go) {
                            Tensor& ga = g.grad_buffer(a);
                            for (std::size_t i = 0; i < go.size(); ++i)
                              if (a.value()[i] > 0.0) ga[i] += go[i];
                          });
}

/// Clamp to [lo, hi]; gradient passes only where the input lies inside.
inline Var clamp(Var a, double lo, double hi) {
  return a.graph().record(detail::map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }),
                          {a}, [a, lo, hi](Graph& g, const Tensor& go) {
                            Tensor& ga = g.grad_buffer(a);
                            for (std::size_t i = 0; i < go.size(); ++i) {
                              const double v = a.value()[i];
                              if (v >= lo && v <= hi) ga[i] += go[i];
                            }
                          });
}

// ---- reductions ----------------------------------------------------------

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().vec()) s += v;
  return a.graph().record(Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(a);
    const double d = go[0];
    for (double& v : ga.vec()) v += d;
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// Mean squared difference over all elements.
inline Var mse(Var a, Var b) { return mean(square(sub(a, b))); }

/// Per-(sample, channel) spatial mean, shape [N,C,1,1].
inline Var channel_mean(Var x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, 1, 1});
  const std::size_t p = s.plane();
  for (int i = 0; i < s.n * s.c; ++i) {
    double acc = 0.0;
    const double* src = x.value().data() + i * p;
    for (std::size_t k = 0; k < p; ++k) acc += src[k];
    out[i] = acc / static_cast<double>(p);
  }
  return x.graph().record(std::move(out), {x}, [x, p](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double d = go[i] / static_cast<double>(p);
      double* dst = gx.data() + i * p;
      for (std::size_t k = 0; k < p; ++k) dst[k] += d;
    }
  });
}

/// Per-(sample, channel) population standard deviation, shape [N,C,1,1].
/// The gradient of a zero-variance channel is taken as zero.
inline Var channel_std(Var x) {
  const Shape s = x.shape();
  Tensor mu(Shape{s.n, s.c, 1, 1});
  Tensor sd(Shape{s.n, s.c, 1, 1});
  const std::size_t p = s.plane();
  for (int i = 0; i < s.n * s.c; ++i) {
    const double* src = x.value().data() + i * p;
    double m = 0.0;
    for (std::size_t k = 0; k < p; ++k) m += src[k];
    m /= static_cast<double>(p);
    double v = 0.0;
    for (std::size_t k = 0; k < p; ++k) v += (src[k] - m) * (src[k] - m);
    mu[i] = m;
    sd[i] = std::sqrt(v / static_cast<double>(p));
  }
  Tensor sd_copy = sd;
  return x.graph().record(std::move(sd_copy), {x}, [x, p, mu, sd](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (sd[i] == 0.0) continue;
      const double coef = go[i] / (static_cast<double>(p) * sd[i]);
      const double* src = x.value().data() + i * p;
      double* dst = gx.data() + i * p;
      for (std::size_t k = 0; k < p; ++k) dst[k] += coef * (src[k] - mu[i]);
    }
  });
}

// ---- broadcasting and dense layers ----------------------------------------

/// x[N,C,H,W] + b[Nb,C,1,1] with Nb in {1, N}.
inline Var add_channel(Var x, Var b) {
  const Shape s = x.shape();
  const Shape bs = b.shape();
  if (bs.c != s.c || bs.h != 1 || bs.w != 1 || (bs.n != 1 && bs.n != s.n)) {
    throw ContractError("add_channel: bias " + bs.str() + " incompatible with " + s.str());
  }
  Tensor out = x.value();
  const std::size_t p = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double bv = b.value()[static_cast<std::size_t>(bs.n == 1 ? 0 : n) * s.c + c];
      double* dst = out.data() + (static_cast<std::size_t>(n) * s.c + c) * p;
      for (std::size_t k = 0; k < p; ++k) dst[k] += bv;
    }
  }
  return x.graph().record(std::move(out), {x, b}, [x, b, s, bs, p](Graph& g, const Tensor& go) {
    g.accumulate(x, go);
    if (b.needs_grad()) {
      Tensor& gb = g.grad_buffer(b);
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const double* src = go.data() + (static_cast<std::size_t>(n) * s.c + c) * p;
          double acc = 0.0;
          for (std::size_t k = 0; k < p; ++k) acc += src[k];
          gb[static_cast<std::size_t>(bs.n == 1 ? 0 : n) * s.c + c] += acc;
        }
      }
    }
  });
}

/// y[N,O,1,1] = x[N,D,1,1] W^T + b, with W stored as [O,D,1,1] and b as [1,O,1,1].
inline Var linear(Var x, Var w, Var b) {
  const int n = x.shape().n;
  const int d = x.shape().c;
  const int o = w.shape().n;
  if (w.shape().c != d || b.shape().c != o) {
    throw ContractError("linear: weight " + w.shape().str() + " incompatible with input " +
                        x.shape().str());
  }
  Tensor out(Shape{n, o, 1, 1});
  detail::CMapMat X(x.value().data(), n, d);
  detail::CMapMat W(w.value().data(), o, d);
  detail::MapMat Y(out.data(), n, o);
  Y.noalias() = X * W.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) out[static_cast<std::size_t>(i) * o + j] += b.value()[j];
  return x.graph().record(std::move(out), {x, w, b}, [x, w, b, n, d, o](Graph& g, const Tensor& go) {
    detail::CMapMat G(go.data(), n, o);
    if (x.needs_grad()) {
      detail::MapMat GX(g.grad_buffer(x).data(), n, d);
      GX.noalias() += G * detail::CMapMat(w.value().data(), o, d);
    }
    if (w.needs_grad()) {
      detail::MapMat GW(g.grad_buffer(w).data(), o, d);
      GW.noalias() += G.transpose() * detail::CMapMat(x.value().data(), n, d);
    }
    if (b.needs_grad()) {
      Tensor& gb = g.grad_buffer(b);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) gb[j] += go[static_cast<std::size_t>(i) * o + j];
    }
  });
}

/// Gather rows of table[V,D,1,1] into [N,D,1,1].
inline Var embedding(Var table, std::span<const int> ids) {
  const int v = table.shape().n;
  const int d = table.shape().c;
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out(Shape{static_cast<int>(rows.size()), d, 1, 1});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v) throw VocabularyError("embedding id out of range");
    std::copy_n(table.value().data() + static_cast<std::size_t>(rows[i]) * d, d,
                out.data() + i * d);
  }
  return table.graph().record(std::move(out), {table}, [table, rows, d](Graph& g, const Tensor& go) {
    Tensor& gt = g.grad_buffer(table);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int k = 0; k < d; ++k)
        gt[static_cast<std::size_t>(rows[i]) * d + k] += go[i * d + k];
  });
}

/// 2-D convolution, weight [O,C,k,k], optional bias [1,O,1,1].
inline Var conv2d(Var x, Var w, Var b, int stride = 1, int pad = -1) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int k = ws.h;
  if (pad < 0) pad = k / 2;
  if (ws.c != xs.c || ws.w != k) {
    throw ContractError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  const int o = ws.n;
  const int ho = detail::out_extent(xs.h, k, stride, pad);
  const int wo = detail::out_extent(xs.w, k, stride, pad);
  const int rows = xs.c * k * k;
  const int cols = ho * wo;

  Tensor out(Shape{xs.n, o, ho, wo});
  std::vector<double> col(static_cast<std::size_t>(rows) * cols);
  detail::CMapMat W(w.value().data(), o, rows);
  for (int n = 0; n < xs.n; ++n) {
    detail::im2col(x.value().data() + n * xs.sample(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
                   col.data());
    detail::MapMat Y(out.data() + static_cast<std::size_t>(n) * o * cols, o, cols);
    Y.noalias() = W * detail::CMapMat(col.data(), rows, cols);
    if (b.valid()) {
      for (int oc = 0; oc < o; ++oc) Y.row(oc).array() += b.value()[oc];
    }
  }

  auto back = [x, w, b, xs, o, k, stride, pad, ho, wo, rows, cols](Graph& g, const Tensor& go) {
    std::vector<double> colbuf(static_cast<std::size_t>(rows) * cols);
    detail::CMapMat W(w.value().data(), o, rows);
    for (int n = 0; n < xs.n; ++n) {
      detail::CMapMat G(go.data() + static_cast<std::size_t>(n) * o * cols, o, cols);
      if (w.needs_grad()) {
        detail::im2col(x.value().data() + n * xs.sample(), xs.c, xs.h, xs.w, k, stride, pad, ho,
                       wo, colbuf.data());
        detail::MapMat GW(g.grad_buffer(w).data(), o, rows);
        GW.noalias() += G * detail::CMapMat(colbuf.data(), rows, cols).transpose();
      }
      if (b.valid() && b.needs_grad()) {
        Tensor& gb = g.grad_buffer(b);
        for (int oc = 0; oc < o; ++oc) gb[oc] += G.row(oc).sum();
      }
      if (x.needs_grad()) {
        detail::MapMat C(colbuf.data(), rows, cols);
        C.noalias() = W.transpose() * G;
        detail::col2im(colbuf.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
                       g.grad_buffer(x).data() + n * xs.sample());
      }
    }
  };
  if (b.valid()) return x.graph().record(std::move(out), {x, w, b}, back);
  return x.graph().record(std::move(out), {x, w}, back);
}

// ---- resampling ----------------------------------------------------------

/// 2x2 average pooling with stride 2 (area downsample).
inline Var avg_pool2(Var x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ContractError("avg_pool2 needs even spatial extent");
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = x.value().data() + nc * s.plane();
    double* dst = out.data() + nc * os.plane();
    for (int y = 0; y < os.h; ++y)
      for (int xx = 0; xx < os.w; ++xx)
        dst[y * os.w + xx] = 0.25 * (src[(2 * y) * s.w + 2 * xx] + src[(2 * y) * s.w + 2 * xx + 1] +
                                     src[(2 * y + 1) * s.w + 2 * xx] +
                                     src[(2 * y + 1) * s.w + 2 * xx + 1]);
  }
  return x.graph().record(std::move(out), {x}, [x, s, os](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(x);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const double* src = go.data() + nc * os.plane();
      double* dst = gx.data() + nc * s.plane();
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) {
          const double d = 0.25 * src[y * os.w + xx];
          dst[(2 * y) * s.w + 2 * xx] += d;
          dst[(2 * y) * s.w + 2 * xx + 1] += d;
          dst[(2 * y + 1) * s.w + 2 * xx] += d;
          dst[(2 * y + 1) * s.w + 2 * xx + 1] += d;
        }
    }
  });
}

/// Nearest-neighbour 2x upsample.
inline Var upsample2(Var x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  Tensor out(os);
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = x.value().data() + nc * s.plane();
    double* dst = out.data() + nc * os.plane();
    for (int y = 0; y < os.h; ++y)
      for (int xx = 0; xx < os.w; ++xx) dst[y * os.w + xx] = src[(y / 2) * s.w + xx / 2];
  }
  return x.graph().record(std::move(out), {x}, [x, s, os](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(x);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const double* src = go.data() + nc * os.plane();
      double* dst = gx.data() + nc * s.plane();
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) dst[(y / 2) * s.w + xx / 2] += src[y * os.w + xx];
    }
  });
}

/// Bilinear resample of the window [top, top+ch) x [left, left+cw) onto an
/// out_h x out_w grid (half-pixel centres, edge samples clamped to the window).
inline Var crop_resize(Var x, int top, int left, int ch, int cw, int out_h, int out_w) {
  const Shape s = x.shape();
  if (top < 0 || left < 0 || ch < 1 || cw < 1 || top + ch > s.h || left + cw > s.w) {
    throw ContractError("crop_resize: window outside image");
  }
  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int in, int out, int offset) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, in - 1);
      t[static_cast<std::size_t>(o)] = Tap{i0 + offset, i1 + offset, src - i0};
    }
    return t;
  };
  const std::vector<Tap> ty = taps(ch, out_h, top);
  const std::vector<Tap> tx = taps(cw, out_w, left);
  const Shape os{s.n, s.c, out_h, out_w};
  Tensor out(os);
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = x.value().data() + nc * s.plane();
    double* dst = out.data() + nc * os.plane();
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[static_cast<std::size_t>(xx)];
        const double top_row = (1 - b.w1) * src[a.i0 * s.w + b.i0] + b.w1 * src[a.i0 * s.w + b.i1];
        const double bot_row = (1 - b.w1) * src[a.i1 * s.w + b.i0] + b.w1 * src[a.i1 * s.w + b.i1];
        dst[y * out_w + xx] = (1 - a.w1) * top_row + a.w1 * bot_row;
      }
    }
  }
  return x.graph().record(std::move(out), {x}, [x, s, os, ty, tx](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(x);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const double* src = go.data() + nc * os.plane();
      double* dst = gx.data() + nc * s.plane();
      for (int y = 0; y < os.h; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < os.w; ++xx) {
          const Tap& b = tx[static_cast<std::size_t>(xx)];
          const double d = src[y * os.w + xx];
          dst[a.i0 * s.w + b.i0] += d * (1 - a.w1) * (1 - b.w1);
          dst[a.i0 * s.w + b.i1] += d * (1 - a.w1) * b.w1;
          dst[a.i1 * s.w + b.i0] += d * a.w1 * (1 - b.w1);
          dst[a.i1 * s.w + b.i1] += d * a.w1 * b.w1;
        }
      }
    }
  });
}

inline Var hflip(Var x) {
  const Shape s = x.shape();
  Tensor out(s);
  for (int nc = 0; nc < s.n * s.c; ++nc)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx)
        out[nc * s.plane() + y * s.w + xx] = x.value()[nc * s.plane() + y * s.w + (s.w - 1 - xx)];
  return x.graph().record(std::move(out), {x}, [x, s](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(x);
    for (int nc = 0; nc < s.n * s.c; ++nc)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
          gx[nc * s.plane() + y * s.w + (s.w - 1 - xx)] += go[nc * s.plane() + y * s.w + xx];
  });
}

/// Separable per-channel filter with an odd 1-D kernel and edge replication.
inline Var separable_filter(Var x, std::vector<double> kernel) {
  const Shape s = x.shape();
  const int r = static_cast<int>(kernel.size()) / 2;
  // Pass along one axis; `horizontal` selects x vs y. Adjoint is the same
  // pass with the scatter reversed.
  auto pass = [s, r, &kernel](const Tensor& in, bool horizontal) {
    Tensor out(s);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const double* src = in.data() + nc * s.plane();
      double* dst = out.data() + nc * s.plane();
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = 0.0;
          for (int k = -r; k <= r; ++k) {
            const int yy = horizontal ? y : std::clamp(y + k, 0, s.h - 1);
            const int xk = horizontal ? std::clamp(xx + k, 0, s.w - 1) : xx;
            acc += kernel[static_cast<std::size_t>(k + r)] * src[yy * s.w + xk];
          }
          dst[y * s.w + xx] = acc;
        }
    }
    return out;
  };
  Tensor out = pass(pass(x.value(), true), false);
  return x.graph().record(std::move(out), {x}, [x, s, r, kernel](Graph& g, const Tensor& go) {
    auto adjoint = [s, r, &kernel](const Tensor& in, bool horizontal) {
      Tensor out(s);
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        const double* src = in.data() + nc * s.plane();
        double* dst = out.data() + nc * s.plane();
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const double d = src[y * s.w + xx];
            for (int k = -r; k <= r; ++k) {
              const int yy = horizontal ? y : std::clamp(y + k, 0, s.h - 1);
              const int xk = horizontal ? std::clamp(xx + k, 0, s.w - 1) : xx;
              dst[yy * s.w + xk] += kernel[static_cast<std::size_t>(k + r)] * d;
            }
          }
      }
      return out;
    };
    g.accumulate(x, adjoint(adjoint(go, false), true));
  });
}

}  // namespace sguard::ag
