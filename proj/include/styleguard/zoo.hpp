#pragma once

// Toy stand-ins for the pretrained models the defender and adversary start
// from: surrogate text-to-image denoisers, a DiffPure-style purifier, two
// architecturally distinct noise upscalers, and the encoder ensemble.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "styleguard/checkpoint.hpp"
#include "styleguard/data.hpp"
#include "styleguard/diffusion.hpp"
#include "styleguard/losses.hpp"
#include "styleguard/optim.hpp"

namespace sguard {

struct PretrainSpec {
  int steps = 1500;
  int batch = 16;
  double lr = 2e-3;
  int token = token::class_prompt;
  int t_max = 0;               // 0: whole schedule
  double uncond_prob = 0.1;    // fraction of samples trained on the unconditional token
};

/// Denoising-score pretraining with Adam, per-sample timesteps.
inline std::vector<double> train_denoiser(DenoiserModel& m, const Tensor& corpus, const NoiseSchedule& sched,
                                          const PretrainSpec& spec, Rng& rng) {
  const int t_max = spec.t_max > 0 ? std::min(spec.t_max, sched.T) : sched.T;
  const int n = corpus.shape().n;
  if (n < 1) throw ContractError("train_denoiser: empty corpus");
  Adam opt(spec.lr);
  std::vector<double> trace;
  for (int step = 0; step < spec.steps; ++step) {
    const int b = std::min(spec.batch, n);
    Tensor x0(Shape{b, corpus.shape().c, corpus.shape().h, corpus.shape().w});
    std::vector<int> ts(static_cast<std::size_t>(b));
    std::vector<int> cs(static_cast<std::size_t>(b));
    Tensor xt(x0.shape());
    Tensor eps = rng.normal_tensor(x0.shape());
    const std::size_t per = x0.shape().sample();
    for (int i = 0; i < b; ++i) {
      const int pick = rng.integer(0, n - 1);
      std::copy_n(corpus.data() + static_cast<std::size_t>(pick) * per, per, x0.data() + static_cast<std::size_t>(i) * per);
      ts[static_cast<std::size_t>(i)] = rng.integer(1, t_max);
      cs[static_cast<std::size_t>(i)] = rng.uniform() < spec.uncond_prob ? token::unconditional : spec.token;
      const double ab = sched.alpha_bar_at(ts[static_cast<std::size_t>(i)]);
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t idx = static_cast<std::size_t>(i) * per + k;
        xt[idx] = std::sqrt(ab) * x0[idx] + std::sqrt(1.0 - ab) * eps[idx];
      }
    }
    Graph g;
    const BoundParams p = bind(g, m, true);
    Var loss = ag::mse(g.constant(eps), predict_noise(m, p, g.constant(xt), ts, cs));
    require_finite(loss.value().item(), "pretraining loss");
    g.backward(loss);
    std::vector<Tensor> grads;
    for (const Var& v : p.vars) grads.push_back(g.grad(v));
    opt.step(m.params(), grads);
    trace.push_back(loss.value().item());
  }
  return trace;
}

struct ZooConfig {
  int image_size = 16;
  int T = 50;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  int n_surrogates = 2;
  DenoiserArch surrogate_arch{3, 32, 1, 16, 4, false, 0};
  DenoiserArch purifier_arch{3, 24, 1, 16, 4, false, 0};
  DenoiserArch upscaler_arch{3, 16, 1, 16, 4, true, 8};
  DenoiserArch heldout_upscaler_arch{3, 24, 2, 16, 4, true, 8};
  int corpus_per_style = 48;
  int pretrain_steps = 1500;
  int purifier_steps = 1500;
  int batch = 16;
  double lr = 2e-3;
  std::uint64_t seed = 7;
};

struct ModelZoo {
  NoiseSchedule schedule;
  std::vector<DenoiserModel> surrogates;  // surrogates[0] doubles as the adversary's base model
  DenoiserModel purifier;
  DenoiserModel upscaler;
  DenoiserModel heldout_upscaler;
  std::vector<EncoderModel> encoders;

  [[nodiscard]] const DenoiserModel& base() const { return surrogates.front(); }

  /// Resolve a purifier/upscaler id used in attack specs.
  [[nodiscard]] const DenoiserModel& by_id(const std::string& id) const {
    if (id == "purifier") return purifier;
    if (id == "upscaler") return upscaler;
    if (id == "upscaler_heldout") return heldout_upscaler;
    if (id.rfind("surrogate", 0) == 0) {
      const std::size_t k = id.size() > 9 ? std::stoul(id.substr(9)) : 0;
      if (k < surrogates.size()) return surrogates[k];
    }
    throw ConfigError("unknown model id '" + id + "'");
  }

  /// Purifiers the defender optimizes against (the held-out upscaler is excluded).
  [[nodiscard]] std::vector<const DenoiserModel*> crafting_purifiers() const { return {&purifier, &upscaler}; }
};

inline ModelZoo build_zoo(const ZooConfig& cfg, const std::function<void(const std::string&)>& log = {}) {
  auto note = [&log](const std::string& s) {
    if (log) log(s);
  };
  ModelZoo zoo;
  zoo.schedule = build_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
  zoo.encoders = {EncoderModel::latent4(), EncoderModel::random8()};
  const Tensor corpus = generic_corpus(cfg.corpus_per_style, cfg.image_size, derive_seed(cfg.seed, "corpus"));

  for (int s = 0; s < cfg.n_surrogates; ++s) {
    DenoiserModel m = DenoiserModel::create(cfg.surrogate_arch, derive_seed(cfg.seed, "surrogate") + s);
    Rng rng(derive_seed(cfg.seed, "surrogate-train") + static_cast<std::uint64_t>(s));
    PretrainSpec spec{cfg.pretrain_steps, cfg.batch, cfg.lr, token::class_prompt, 0, 0.1};
    const auto trace = train_denoiser(m, corpus, zoo.schedule, spec, rng);
    // The instance identifier starts next to the class word, like a rare token.
    Tensor& emb = m.params()[DenoiserModel::kEmbedding];
    const int d = emb.shape().c;
    for (int k = 0; k < d; ++k) {
      emb[static_cast<std::size_t>(token::instance) * d + k] =
          emb[static_cast<std::size_t>(token::class_prompt) * d + k] + 0.1 * rng.normal();
    }
    note("surrogate " + std::to_string(s) + " final loss " + std::to_string(trace.back()));
    zoo.surrogates.push_back(std::move(m));
  }

  auto train_purifier = [&](const DenoiserArch& arch, const std::string& tag) {
    DenoiserModel m = DenoiserModel::create(arch, derive_seed(cfg.seed, tag));
    Rng rng(derive_seed(cfg.seed, tag + "-train"));
    PretrainSpec spec{cfg.purifier_steps, cfg.batch, cfg.lr, token::unconditional, arch.max_t, 0.0};
    const auto trace = train_denoiser(m, corpus, zoo.schedule, spec, rng);
    note(tag + " final loss " + std::to_string(trace.back()));
    return m;
  };
  zoo.purifier = train_purifier(cfg.purifier_arch, "purifier");
  zoo.upscaler = train_purifier(cfg.upscaler_arch, "upscaler");
  zoo.heldout_upscaler = train_purifier(cfg.heldout_upscaler_arch, "upscaler_heldout");
  return zoo;
}

inline void save_zoo(const std::filesystem::path& dir, const ModelZoo& zoo) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < zoo.surrogates.size(); ++i) {
    save_checkpoint(dir / ("surrogate" + std::to_string(i) + ".sglab"), zoo.surrogates[i], zoo.schedule);
  }
  save_checkpoint(dir / "purifier.sglab", zoo.purifier, zoo.schedule);
  save_checkpoint(dir / "upscaler.sglab", zoo.upscaler, zoo.schedule);
  save_checkpoint(dir / "upscaler_heldout.sglab", zoo.heldout_upscaler, zoo.schedule);
}

inline ModelZoo load_zoo(const std::filesystem::path& dir, int n_surrogates) {
  ModelZoo zoo;
  for (int i = 0; i < n_surrogates; ++i) {
    Checkpoint ck = load_checkpoint(dir / ("surrogate" + std::to_string(i) + ".sglab"));
    zoo.schedule = ck.schedule;
    zoo.surrogates.push_back(std::move(ck.model));
  }
  zoo.purifier = load_checkpoint(dir / "purifier.sglab").model;
  zoo.upscaler = load_checkpoint(dir / "upscaler.sglab").model;
  zoo.heldout_upscaler = load_checkpoint(dir / "upscaler_heldout.sglab").model;
  zoo.encoders = {EncoderModel::latent4(), EncoderModel::random8()};
  return zoo;
}

}  // namespace sguard
