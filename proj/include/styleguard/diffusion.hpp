#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "styleguard/autograd.hpp"
#include "styleguard/errors.hpp"
#include "styleguard/rng.hpp"
#include "styleguard/tensor.hpp"

namespace sguard {

using ag::Graph;
using ag::Var;

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// DDPM coefficients indexed by timestep t in [1, T].
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  void check(int t) const {
    if (t < 1 || t > T) {
      throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }
  }
  [[nodiscard]] double beta_at(int t) const { check(t); return beta[static_cast<std::size_t>(t - 1)]; }
  [[nodiscard]] double alpha_at(int t) const { check(t); return alpha[static_cast<std::size_t>(t - 1)]; }
  [[nodiscard]] double alpha_bar_at(int t) const {
    check(t);
    return alpha_bar[static_cast<std::size_t>(t - 1)];
  }
  /// alpha_bar with the convention alpha_bar(0) = 1.
  [[nodiscard]] double alpha_bar_or_one(int t) const { return t == 0 ? 1.0 : alpha_bar_at(t); }
};

/// Linear beta ramp from beta_start to beta_end over T steps.
inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("schedule needs T >= 2");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(static_cast<std::size_t>(T));
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double b = beta_start + (beta_end - beta_start) * i / static_cast<double>(T - 1);
    s.beta[static_cast<std::size_t>(i)] = b;
    s.alpha[static_cast<std::size_t>(i)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

/// Schedule from explicit betas (checkpoint restore; T = 1 allowed here for
/// single-step sampling).
inline NoiseSchedule schedule_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one beta");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta = std::move(betas);
  double prod = 1.0;
  for (double b : s.beta) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta outside (0, 1)");
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  return s;
}

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps. No clamping.
inline Var forward_diffuse(Var x0, int t, Var eps, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar_at(t);
  if (!(x0.shape() == eps.shape())) throw ContractError("forward_diffuse: eps shape mismatch");
  return ag::add(ag::scale(x0, std::sqrt(ab)), ag::scale(eps, std::sqrt(1.0 - ab)));
}

inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar_at(t);
  x0.check_same(eps);
  Tensor out(x0.shape());
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

/// Reserved prompt tokens shared by every toy model.
namespace token {
inline constexpr int unconditional = 0;
inline constexpr int class_prompt = 1;  // "a painting"
inline constexpr int instance = 2;      // "[V] painting"
}  // namespace token

struct DenoiserArch {
  int channels = 3;
  int width = 32;
  int blocks = 1;  // residual 3x3 convs between conv_in and conv_out
  int cond_dim = 16;
  int vocab = 4;
  bool upsample = false;  // run the body at 2x resolution, then area-downsample
  int max_t = 0;          // largest timestep seen in training; 0 means the full schedule

  friend bool operator==(const DenoiserArch&, const DenoiserArch&) = default;
};

/// Conditional noise predictor eps(x_t, t, c). Parameters live in a list of
/// tensors; index 0 is always the prompt-embedding table.
class DenoiserModel {
 public:
  static constexpr std::size_t kEmbedding = 0;

  DenoiserModel() = default;

  static DenoiserModel create(const DenoiserArch& arch, std::uint64_t seed) {
    if (arch.width < 1 || arch.blocks < 0 || arch.cond_dim < 2 || arch.vocab < 3 || arch.channels < 1) {
      throw ConfigError("invalid denoiser architecture");
    }
    DenoiserModel m;
    m.arch_ = arch;
    Rng rng(derive_seed(seed, "denoiser-init"));
    auto gaussian = [&rng](Shape s, double std) {
      Tensor t(s);
      for (double& v : t.vec()) v = std * rng.normal();
      return t;
    };
    const int w = arch.width;
    const int d = arch.cond_dim;
    m.params_.push_back(gaussian(Shape{arch.vocab, d, 1, 1}, 0.5));
    m.params_.push_back(gaussian(Shape{w, arch.channels, 3, 3}, std::sqrt(2.0 / (9.0 * arch.channels))));
    m.params_.push_back(Tensor(Shape{1, w, 1, 1}));
    for (int b = 0; b < arch.blocks; ++b) {
      m.params_.push_back(gaussian(Shape{w, d, 1, 1}, std::sqrt(1.0 / d)));
      m.params_.push_back(Tensor(Shape{1, w, 1, 1}));
      m.params_.push_back(gaussian(Shape{w, w, 3, 3}, 0.5 * std::sqrt(2.0 / (9.0 * w))));
      m.params_.push_back(Tensor(Shape{1, w, 1, 1}));
    }
    m.params_.push_back(gaussian(Shape{w, d, 1, 1}, std::sqrt(1.0 / d)));
    m.params_.push_back(Tensor(Shape{1, w, 1, 1}));
    m.params_.push_back(gaussian(Shape{arch.channels, w, 3, 3}, 0.1 * std::sqrt(1.0 / (9.0 * w))));
    m.params_.push_back(Tensor(Shape{1, arch.channels, 1, 1}));
    return m;
  }

  [[nodiscard]] const DenoiserArch& arch() const { return arch_; }
  [[nodiscard]] std::vector<Tensor>& params() { return params_; }
  [[nodiscard]] const std::vector<Tensor>& params() const { return params_; }

  [[nodiscard]] std::size_t num_params() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
  }

  [[nodiscard]] std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(num_params());
    for (const Tensor& p : params_) out.insert(out.end(), p.vec().begin(), p.vec().end());
    return out;
  }

  void set_flat(std::span<const double> values) {
    if (values.size() != num_params()) throw ContractError("set_flat: parameter count mismatch");
    std::size_t off = 0;
    for (Tensor& p : params_) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p.size(), p.vec().begin());
      off += p.size();
    }
  }

  [[nodiscard]] int trained_max_t(const NoiseSchedule& sched) const {
    return arch_.max_t > 0 ? std::min(arch_.max_t, sched.T) : sched.T;
  }

  void check_token(int c) const {
    if (c < 0 || c >= arch_.vocab) {
      throw VocabularyError("prompt token " + std::to_string(c) + " not in vocabulary of size " +
                            std::to_string(arch_.vocab));
    }
  }

  friend bool operator==(const DenoiserModel& a, const DenoiserModel& b) {
    return a.arch_ == b.arch_ && a.params_ == b.params_;
  }

 private:
  DenoiserArch arch_;
  std::vector<Tensor> params_;
};

/// Parameters of one model placed on a graph.
struct BoundParams {
  std::vector<Var> vars;
};

/// Place parameters on `g`; `trainable` makes them gradient leaves.
inline BoundParams bind(Graph& g, const DenoiserModel& m, bool trainable) {
  BoundParams b;
  b.vars.reserve(m.params().size());
  for (const Tensor& p : m.params()) b.vars.push_back(trainable ? g.input(p) : g.constant(p));
  return b;
}

namespace detail {

/// Sinusoidal embedding of the normalized timestep, one row per sample.
inline Tensor timestep_embedding(std::span<const int> t, int dim) {
  Tensor out(Shape{static_cast<int>(t.size()), dim, 1, 1});
  const int half = dim / 2;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double pos = static_cast<double>(t[i]);
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(1000.0) * k / std::max(1, half - 1));
      out[i * dim + k] = std::sin(pos * freq);
      out[i * dim + half + k] = std::cos(pos * freq);
    }
  }
  return out;
}

}  // namespace detail

/// eps_theta(x_t, t, c); one timestep and token per sample.
inline Var predict_noise(const DenoiserModel& m, const BoundParams& p, Var x_t,
                         std::span<const int> t, std::span<const int> tokens) {
  const DenoiserArch& a = m.arch();
  const int n = x_t.shape().n;
  if (x_t.shape().c != a.channels) throw ContractError("predict_noise: channel mismatch");
  if (static_cast<int>(t.size()) != n || static_cast<int>(tokens.size()) != n) {
    throw ContractError("predict_noise: need one timestep and token per sample");
  }
  for (int c : tokens) m.check_token(c);
  for (int ti : t) {
    if (ti < 1) throw IndexError("timestep must be >= 1");
  }
  Graph& g = x_t.graph();
  Var cond = ag::add(ag::embedding(p.vars[DenoiserModel::kEmbedding], tokens),
                     g.constant(detail::timestep_embedding(t, a.cond_dim)));
  cond = ag::silu(cond);

  std::size_t k = 1;
  Var h = a.upsample ? ag::upsample2(x_t) : x_t;
  h = ag::conv2d(h, p.vars[k], p.vars[k + 1]);
  k += 2;
  for (int b = 0; b < a.blocks; ++b) {
    Var shift = ag::linear(cond, p.vars[k], p.vars[k + 1]);
    Var r = ag::silu(ag::add_channel(h, shift));
    h = ag::add(h, ag::conv2d(r, p.vars[k + 2], p.vars[k + 3]));
    k += 4;
  }
  Var shift = ag::linear(cond, p.vars[k], p.vars[k + 1]);
  h = ag::silu(ag::add_channel(h, shift));
  Var out = ag::conv2d(h, p.vars[k + 2], p.vars[k + 3]);
  return a.upsample ? ag::avg_pool2(out) : out;
}

inline Var predict_noise(const DenoiserModel& m, const BoundParams& p, Var x_t, int t, int c) {
  const std::vector<int> ts(static_cast<std::size_t>(x_t.shape().n), t);
  const std::vector<int> cs(static_cast<std::size_t>(x_t.shape().n), c);
  return predict_noise(m, p, x_t, ts, cs);
}

/// Gradient-free evaluation.
inline Tensor predict_noise(const DenoiserModel& m, const Tensor& x_t, int t, int c) {
  Graph g;
  const BoundParams p = bind(g, m, false);
  return predict_noise(m, p, g.constant(x_t), t, c).value();
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

enum class EncoderKind { latent4, random8 };

/// Fixed feature encoder standing in for a VAE/CLIP image encoder.
struct EncoderModel {
  EncoderKind kind = EncoderKind::latent4;
  Tensor weight;
  Tensor bias;
  int stride = 1;
  bool squash = false;

  [[nodiscard]] int out_channels() const { return weight.shape().n; }

  /// 2x2 stride-2 projection: area-averaged RGB rescaled to [-1, 1] plus a
  /// luminance edge channel.
  static EncoderModel latent4() {
    EncoderModel e;
    e.kind = EncoderKind::latent4;
    e.stride = 2;
    e.weight = Tensor(Shape{4, 3, 2, 2});
    e.bias = Tensor(Shape{1, 4, 1, 1});
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) e.weight.at(c, c, y, x) = 0.5;
      e.bias[static_cast<std::size_t>(c)] = -1.0;
    }
    const double lum[3] = {0.299, 0.587, 0.114};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 2; ++y) {
        e.weight.at(3, c, y, 0) = lum[c];
        e.weight.at(3, c, y, 1) = -lum[c];
      }
    return e;
  }

  /// Frozen random 3x3 conv with tanh, 8 channels.
  static EncoderModel random8(std::uint64_t seed = 1234) {
    EncoderModel e;
    e.kind = EncoderKind::random8;
    e.stride = 1;
    e.squash = true;
    Rng rng(derive_seed(seed, "encoder-random8"));
    e.weight = rng.normal_tensor(Shape{8, 3, 3, 3}) * std::sqrt(2.0 / 27.0);
    e.bias = rng.normal_tensor(Shape{1, 8, 1, 1}) * 0.1;
    return e;
  }
};

inline Var encode(const EncoderModel& enc, Var x) {
  Graph& g = x.graph();
  const int k = enc.weight.shape().h;
  const int pad = enc.stride == 2 && k == 2 ? 0 : k / 2;
  Var y = ag::conv2d(x, g.constant(enc.weight), g.constant(enc.bias), enc.stride, pad);
  return enc.squash ? ag::tanh(y) : y;
}

inline Tensor encode(const EncoderModel& enc, const Tensor& x) {
  Graph g;
  return encode(enc, g.constant(x)).value();
}

/// Per-image channel statistics of a latent.
struct LatentStats {
  std::vector<double> mu;
  std::vector<double> sigma;
};

/// Channel means and population standard deviations, one entry per image.
inline std::vector<LatentStats> feature_stats(const Tensor& latent) {
  const Shape s = latent.shape();
  if (s.plane() < 2) throw DegenerateInputError("feature_stats needs >= 2 spatial elements per channel");
  std::vector<LatentStats> out(static_cast<std::size_t>(s.n));
  for (int n = 0; n < s.n; ++n) {
    LatentStats& st = out[static_cast<std::size_t>(n)];
    for (int c = 0; c < s.c; ++c) {
      const double* src = latent.data() + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      double m = 0.0;
      for (std::size_t k = 0; k < s.plane(); ++k) m += src[k];
      m /= static_cast<double>(s.plane());
      double v = 0.0;
      for (std::size_t k = 0; k < s.plane(); ++k) v += (src[k] - m) * (src[k] - m);
      st.mu.push_back(m);
      st.sigma.push_back(std::sqrt(v / static_cast<double>(s.plane())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// DDPM ancestral sampling from pure noise; clamped to [0,1] only at the end.
inline Tensor sample_reverse(const DenoiserModel& m, const NoiseSchedule& sched, int c, int n,
                             int height, int width, std::uint64_t seed) {
  if (n < 1) throw ContractError("sample_reverse needs n >= 1");
  m.check_token(c);
  Rng rng(derive_seed(seed, "sample-reverse"));
  Tensor x = rng.normal_tensor(Shape{n, m.arch().channels, height, width});
  for (int t = sched.T; t >= 1; --t) {
    const Tensor eps = predict_noise(m, x, t, c);
    const double beta = sched.beta_at(t);
    const double alpha = sched.alpha_at(t);
    const double ab = sched.alpha_bar_at(t);
    const double coef = beta / std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(alpha);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = inv * (x[i] - coef * eps[i]);
    if (t > 1) {
      const double var = beta * (1.0 - sched.alpha_bar_at(t - 1)) / (1.0 - ab);
      const double sd = std::sqrt(var);
      for (double& v : x.vec()) v += sd * rng.normal();
    }
  }
  for (double& v : x.vec()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

}  // namespace sguard
