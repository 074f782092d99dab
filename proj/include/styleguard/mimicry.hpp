#pragma once

// Adversary simulation: fine-tune a fresh copy of the base model on (possibly
// preprocessed) images, sample from it, and score the samples.

#include <optional>
#include <string>
#include <vector>

#include "styleguard/bilevel.hpp"
#include "styleguard/metrics.hpp"
#include "styleguard/transforms.hpp"
#include "styleguard/zoo.hpp"

namespace sguard {

enum class MimicMethod { dreambooth_full, textual_inversion };
enum class MimicOptimizer { adam, sgd };

inline std::string method_name(MimicMethod m) {
  return m == MimicMethod::dreambooth_full ? "dreambooth" : "textual_inversion";
}

struct MimicrySpec {
  MimicMethod method = MimicMethod::dreambooth_full;
  int steps = 200;
  double lr = 1e-3;
  MimicOptimizer optimizer = MimicOptimizer::adam;
  int instance_token = token::instance;
  int prior_token = token::class_prompt;
  double lam_prior = 1.0;
  std::optional<AttackSpec> preprocessing;

  void validate() const {
    if (steps < 1) throw ConfigError("mimicry steps must be >= 1");
    if (lr < 0) throw ConfigError("mimicry lr must be >= 0");
    if (instance_token == prior_token) throw ConfigError("instance and prior tokens must differ");
  }
};

struct MimicResult {
  DenoiserModel model;
  std::vector<double> loss_trace;
};

/// Apply an adversary preprocessing step; purifier ids resolve in `zoo`.
inline Tensor preprocess(const AttackSpec& attack, const Tensor& x, const ModelZoo& zoo, Rng& rng) {
  if (const auto* t = std::get_if<TransformSpec>(&attack)) return apply_transform(*t, x, rng);
  const auto& p = std::get<PurifierSpec>(attack);
  return purify(p, x, zoo.by_id(p.model_id), zoo.schedule, rng);
}

/// Fine-tune a copy of `base` with Adam. DreamBooth updates every tensor;
/// textual inversion updates only the instance token's embedding row via the
/// instance term, leaving all other parameters bitwise unchanged.
inline MimicResult mimic_finetune(const DenoiserModel& base, const Tensor& x_train, const Tensor& x_prior,
                                  const MimicrySpec& spec, const NoiseSchedule& sched, Rng& rng) {
  spec.validate();
  base.check_token(spec.instance_token);
  base.check_token(spec.prior_token);
  MimicResult out{base, {}};
  DenoiserModel& m = out.model;
  Adam opt(spec.lr);
  const bool ti = spec.method == MimicMethod::textual_inversion;
  std::vector<bool> active(m.params().size(), !ti);
  if (ti) active[DenoiserModel::kEmbedding] = true;
  const int d = m.arch().cond_dim;
  auto apply = [&](const std::vector<Tensor>& grads) {
    if (spec.optimizer == MimicOptimizer::sgd) {
      sgd_step(m.params(), grads, spec.lr, active);
    } else {
      opt.step(m.params(), grads, active);
    }
  };

  for (int step = 0; step < spec.steps; ++step) {
    Graph g;
    const BoundParams p = bind(g, m, true);
    const NoisePredictor predict = predictor_for(m, p);
    Var loss = ti ? instance_loss(predict, g.constant(x_train), spec.instance_token, sched, rng)
                  : dreambooth_loss(predict, g.constant(x_train), g.constant(x_prior), spec.instance_token,
                                    spec.prior_token, sched, spec.lam_prior, rng);
    require_finite(loss.value().item(), "mimicry loss");
    g.backward(loss);
    std::vector<Tensor> grads;
    for (const Var& v : p.vars) grads.push_back(g.grad(v));
    if (ti) {
      // Only the instance row of the table moves.
      Tensor& ge = grads[DenoiserModel::kEmbedding];
      for (int row = 0; row < ge.shape().n; ++row) {
        if (row == spec.instance_token) continue;
        for (int k = 0; k < d; ++k) ge[static_cast<std::size_t>(row) * d + k] = 0.0;
      }
      const Tensor before = m.params()[DenoiserModel::kEmbedding];
      apply(grads);
      Tensor& after = m.params()[DenoiserModel::kEmbedding];
      for (int row = 0; row < after.shape().n; ++row) {
        if (row == spec.instance_token) continue;
        for (int k = 0; k < d; ++k)
          after[static_cast<std::size_t>(row) * d + k] = before[static_cast<std::size_t>(row) * d + k];
      }
    } else {
      apply(grads);
    }
    out.loss_trace.push_back(loss.value().item());
  }
  return out;
}

/// n samples for prompt `c` (delegates to ancestral sampling).
inline Tensor generate_set(const DenoiserModel& m, int c, int n, const NoiseSchedule& sched, int size,
                           std::uint64_t seed) {
  return sample_reverse(m, sched, c, n, size, size, seed);
}

struct MetricsReport {
  double fid = 0.0;
  double precision = 0.0;
  std::optional<double> ims;
  std::optional<double> success_rate;
  int n_clean_generated = 0;
  int n_protected_generated = 0;
  int n_train = 0;
  std::string method;
  std::string preprocessing = "none";
};

struct EvalSettings {
  MimicrySpec mimic;
  int n_generate = 64;
  int precision_k = 3;
  std::uint64_t seed = 0;  // shared by both arms: prior images, fine-tuning draws, sampling
  bool with_ims = true;
};

/// Generations of a model fine-tuned on `x_train` after optional preprocessing.
inline Tensor mimic_and_generate(const ModelZoo& zoo, const Tensor& x_train, const EvalSettings& s,
                                 const std::optional<AttackSpec>& preprocessing) {
  Rng pre_rng(derive_seed(s.seed, "preprocess"));
  const Tensor train = preprocessing ? preprocess(*preprocessing, x_train, zoo, pre_rng) : x_train;
  const int size = x_train.shape().h;
  const Tensor prior = sample_reverse(zoo.base(), zoo.schedule, s.mimic.prior_token, x_train.shape().n, size, size,
                                      derive_seed(s.seed, "mimic-prior"));
  Rng ft_rng(derive_seed(s.seed, "mimic-finetune"));
  const MimicResult fitted = mimic_finetune(zoo.base(), train, prior, s.mimic, zoo.schedule, ft_rng);
  return generate_set(fitted.model, s.mimic.instance_token, s.n_generate, zoo.schedule, size,
                      derive_seed(s.seed, "mimic-generate"));
}

/// Score generations of the protected arm against the clean arm.
inline MetricsReport score_generations(const Tensor& clean_gen, const Tensor& protected_gen, const Tensor& x_clean,
                                       const EvalSettings& s, const FeatureExtractor& fx = FeatureExtractor()) {
  MetricsReport r;
  const FeatureMatrix fc = fx(clean_gen);
  const FeatureMatrix fp = fx(protected_gen);
  r.fid = fid(fc, fp);
  r.precision = precision_knn(fc, fp, s.precision_k);
  if (s.with_ims) r.ims = ims(fp, fx(x_clean));
  r.n_clean_generated = clean_gen.shape().n;
  r.n_protected_generated = protected_gen.shape().n;
  r.n_train = x_clean.shape().n;
  r.method = method_name(s.mimic.method);
  r.preprocessing = s.mimic.preprocessing ? attack_name(*s.mimic.preprocessing) : "none";
  return r;
}

/// Train on x_clean and on preprocessed x_protected with matched seeds,
/// generate matched sets, and compare them with the fixed feature extractor.
inline MetricsReport evaluate_protection(const ModelZoo& zoo, const Tensor& x_clean, const Tensor& x_protected,
                                         const EvalSettings& s) {
  const Tensor clean_gen = mimic_and_generate(zoo, x_clean, s, std::nullopt);
  const Tensor prot_gen = mimic_and_generate(zoo, x_protected, s, s.mimic.preprocessing);
  return score_generations(clean_gen, prot_gen, x_clean, s);
}

}  // namespace sguard
