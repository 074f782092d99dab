#pragma once

// Operational shell: run configs, the cached model zoo, run directories and
// the five commands behind the command-line tool.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleguard/bilevel.hpp"
#include "styleguard/checkpoint.hpp"
#include "styleguard/data.hpp"
#include "styleguard/image_io.hpp"
#include "styleguard/mimicry.hpp"
#include "styleguard/zoo.hpp"

namespace sguard::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kCacheEnv = "STYLEGUARD_CACHE";

// ---------------------------------------------------------------- config

/// Reads keys out of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

struct DataConfig {
  std::string source = "synthetic";  // or a folder of PNGs
  std::string style = "stripes";
  std::uint64_t palette = 101;
  std::string target_source = "synthetic";
  std::string target_style = "gradient";
  std::uint64_t target_palette = 202;
  int n_images = 10;
  int image_size = 16;
  std::uint64_t seed = 1;  // synthetic image draws; independent of the run seed
};

struct ReportConfig {
  std::string label;  // method name in reports; derived from toggles when empty
  bool with_ims = true;
  int n_generate = 24;
  int precision_k = 3;
  std::vector<std::string> formats{"csv", "json"};
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ZooConfig models;
  ProtectionConfig protect;
  std::vector<AttackSpec> attack;
  MimicrySpec mimic;
  ReportConfig report;
};

inline AttackSpec parse_attack(const json& j, const std::string& where) {
  Section s(j, where);
  const std::string kind = s.get<std::string>("kind", "");
  AttackSpec out;
  if (kind == "identity") {
    out = TransformSpec::identity();
  } else if (kind == "gaussian_noise") {
    out = TransformSpec::noise(s.get("sigma", 0.05));
  } else if (kind == "crop_resize") {
    out = TransformSpec::crop(s.get("ratio", 0.8));
  } else if (kind == "hflip") {
    out = TransformSpec::flip();
  } else if (kind == "gaussian_blur") {
    out = TransformSpec::blur(s.get("kernel", 7));
  } else if (kind == "diffpure") {
    out = PurifierSpec{PurifierKind::diffpure, s.get("steps", 5), 0.1, s.get<std::string>("model", "purifier")};
  } else if (kind == "noise_upscale") {
    out = PurifierSpec{PurifierKind::noise_upscale, 5, s.get("sigma", 0.1), s.get<std::string>("model", "upscaler")};
  } else {
    throw ConfigError(where + ": unknown attack kind '" + kind + "'");
  }
  s.finish();
  if (const auto* t = std::get_if<TransformSpec>(&out)) t->validate();
  if (const auto* p = std::get_if<PurifierSpec>(&out)) {
    if (p->steps < 0) throw ConfigError(where + ": steps must be >= 0");
    if (!(p->noise_sigma >= 0)) throw ConfigError(where + ": sigma must be >= 0");
    if (p->model_id != "purifier" && p->model_id != "upscaler" && p->model_id != "upscaler_heldout") {
      throw ConfigError(where + ": unknown model '" + p->model_id + "'");
    }
  }
  return out;
}

inline json attack_json(const AttackSpec& a) {
  if (const auto* t = std::get_if<TransformSpec>(&a)) {
    switch (t->kind) {
      case TransformKind::identity: return {{"kind", "identity"}};
      case TransformKind::gaussian_noise: return {{"kind", "gaussian_noise"}, {"sigma", t->sigma}};
      case TransformKind::center_crop_resize: return {{"kind", "crop_resize"}, {"ratio", t->ratio}};
      case TransformKind::horizontal_flip: return {{"kind", "hflip"}};
      case TransformKind::gaussian_blur: return {{"kind", "gaussian_blur"}, {"kernel", t->kernel}};
    }
  }
  const auto& p = std::get<PurifierSpec>(a);
  if (p.kind == PurifierKind::diffpure) return {{"kind", "diffpure"}, {"steps", p.steps}, {"model", p.model_id}};
  return {{"kind", "noise_upscale"}, {"sigma", p.noise_sigma}, {"model", p.model_id}};
}

inline RunConfig parse_config(const json& root) {
  RunConfig c;
  Section top(root, "config");
  c.seed = top.get<std::uint64_t>("seed", 0);

  if (top.has("data")) {
    Section s(top.raw("data"), "data");
    DataConfig& d = c.data;
    d.source = s.get("source", d.source);
    d.style = s.get("style", d.style);
    d.palette = s.get("palette", d.palette);
    d.target_source = s.get("target_source", d.target_source);
    d.target_style = s.get("target_style", d.target_style);
    d.target_palette = s.get("target_palette", d.target_palette);
    d.n_images = s.get("n_images", d.n_images);
    d.image_size = s.get("image_size", d.image_size);
    d.seed = s.get("seed", d.seed);
    s.finish();
  } else {
    top.get<int>("data", 0);
  }
  if (c.data.n_images < 1) throw ConfigError("data.n_images must be >= 1");
  if (c.data.image_size < 4) throw ConfigError("data.image_size must be >= 4");
  if (c.data.source == "synthetic") parse_style(c.data.style);
  if (c.data.target_source == "synthetic") parse_style(c.data.target_style);

  ZooConfig& z = c.models;
  if (top.has("models")) {
    Section s(top.raw("models"), "models");
    z.T = s.get("T", z.T);
    z.beta_start = s.get("beta_start", z.beta_start);
    z.beta_end = s.get("beta_end", z.beta_end);
    z.n_surrogates = s.get("n_surrogates", z.n_surrogates);
    z.corpus_per_style = s.get("corpus_per_style", z.corpus_per_style);
    z.pretrain_steps = s.get("pretrain_steps", z.pretrain_steps);
    z.purifier_steps = s.get("purifier_steps", z.purifier_steps);
    z.batch = s.get("batch", z.batch);
    z.lr = s.get("lr", z.lr);
    z.seed = s.get("seed", z.seed);
    s.finish();
  } else {
    top.get<int>("models", 0);
  }
  z.image_size = c.data.image_size;
  if (z.T < 1 || z.n_surrogates < 1 || z.pretrain_steps < 1 || z.purifier_steps < 1 || z.batch < 1) {
    throw ConfigError("models: T, n_surrogates, steps and batch must be >= 1");
  }

  ProtectionConfig& p = c.protect;
  if (top.has("protect")) {
    Section s(top.raw("protect"), "protect");
    p.N = s.get("N", p.N);
    p.K1 = s.get("K1", p.K1);
    p.K2 = s.get("K2", p.K2);
    p.alpha = s.get("alpha", p.alpha);
    p.budget = s.get("budget", p.budget);
    p.beta_lr = s.get("beta_lr", p.beta_lr);
    p.weights.eta = s.get("eta", p.weights.eta);
    p.weights.lam = s.get("lam", p.weights.lam);
    p.weights.lam_prior = s.get("lam_prior", p.weights.lam_prior);
    p.weights.delta_noise = s.get("delta_noise", p.weights.delta_noise);
    p.style_sign = s.get("style_sign", p.style_sign);
    p.J = s.get("J", p.J);
    if (s.has("toggles")) {
      Section t(s.raw("toggles"), "protect.toggles");
      p.toggles.denoise = t.get("denoise", true);
      p.toggles.upscale = t.get("upscale", true);
      p.toggles.style = t.get("style", true);
      t.finish();
    } else {
      s.get<int>("toggles", 0);
    }
    if (s.has("transforms")) {
      p.transform_pool.clear();
      const json& arr = s.raw("transforms");
      if (!arr.is_array()) throw ConfigError("protect.transforms: expected a list");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const AttackSpec a = parse_attack(arr[i], "protect.transforms[" + std::to_string(i) + "]");
        const auto* t = std::get_if<TransformSpec>(&a);
        if (!t) throw ConfigError("protect.transforms: purifiers are not differentiable transforms here");
        p.transform_pool.push_back(*t);
      }
    } else {
      s.get<int>("transforms", 0);
    }
    s.finish();
  } else {
    top.get<int>("protect", 0);
  }
  p.seed = c.seed;
  p.validate();

  if (top.has("attack")) {
    const json& arr = top.raw("attack");
    if (!arr.is_array()) throw ConfigError("attack: expected a list");
    for (std::size_t i = 0; i < arr.size(); ++i) c.attack.push_back(parse_attack(arr[i], "attack[" + std::to_string(i) + "]"));
  } else {
    top.get<int>("attack", 0);
  }

  MimicrySpec& m = c.mimic;
  if (top.has("mimic")) {
    Section s(top.raw("mimic"), "mimic");
    const std::string method = s.get<std::string>("method", "dreambooth");
    if (method == "dreambooth") {
      m.method = MimicMethod::dreambooth_full;
    } else if (method == "textual_inversion") {
      m.method = MimicMethod::textual_inversion;
    } else {
      throw ConfigError("mimic.method: unknown '" + method + "'");
    }
    m.steps = s.get("steps", m.steps);
    m.lr = s.get("lr", m.lr);
    const std::string opt = s.get<std::string>("optimizer", "adam");
    if (opt == "adam") {
      m.optimizer = MimicOptimizer::adam;
    } else if (opt == "sgd") {
      m.optimizer = MimicOptimizer::sgd;
    } else {
      throw ConfigError("mimic.optimizer: unknown '" + opt + "'");
    }
    m.lam_prior = s.get("lam_prior", m.lam_prior);
    if (s.has("preprocessing")) m.preprocessing = parse_attack(s.raw("preprocessing"), "mimic.preprocessing");
    else s.get<int>("preprocessing", 0);
    s.finish();
  } else {
    top.get<int>("mimic", 0);
  }
  m.validate();

  ReportConfig& r = c.report;
  if (top.has("report")) {
    Section s(top.raw("report"), "report");
    r.label = s.get("label", r.label);
    r.with_ims = s.get("with_ims", r.with_ims);
    r.n_generate = s.get("n_generate", r.n_generate);
    r.precision_k = s.get("precision_k", r.precision_k);
    r.formats = s.get("formats", r.formats);
    s.finish();
  } else {
    top.get<int>("report", 0);
  }
  if (r.precision_k < 1 || r.n_generate <= r.precision_k) {
    throw ConfigError("report: need 1 <= precision_k < n_generate");
  }
  if (r.n_generate <= FeatureExtractor::kDim) {
    throw ConfigError("report.n_generate must exceed the feature dimension (" + std::to_string(FeatureExtractor::kDim) + ")");
  }
  for (const auto& f : r.formats) {
    if (f != "csv" && f != "json") throw ConfigError("report.formats: unknown '" + f + "'");
  }
  top.finish();
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

inline json models_json(const ZooConfig& z) {
  return {{"T", z.T},
          {"beta_start", z.beta_start},
          {"beta_end", z.beta_end},
          {"n_surrogates", z.n_surrogates},
          {"corpus_per_style", z.corpus_per_style},
          {"pretrain_steps", z.pretrain_steps},
          {"purifier_steps", z.purifier_steps},
          {"batch", z.batch},
          {"lr", z.lr},
          {"seed", z.seed},
          {"image_size", z.image_size}};
}

/// Every field with its effective value; parse_config(resolved) reproduces `c`.
inline json resolved_json(const RunConfig& c) {
  json models = models_json(c.models);
  models.erase("image_size");
  const ProtectionConfig& p = c.protect;
  json transforms = json::array();
  for (const auto& t : p.transform_pool) transforms.push_back(attack_json(t));
  json attacks = json::array();
  for (const auto& a : c.attack) attacks.push_back(attack_json(a));
  const MimicrySpec& m = c.mimic;
  return {
      {"seed", c.seed},
      {"data",
       {{"source", c.data.source},
        {"style", c.data.style},
        {"palette", c.data.palette},
        {"target_source", c.data.target_source},
        {"target_style", c.data.target_style},
        {"target_palette", c.data.target_palette},
        {"n_images", c.data.n_images},
        {"image_size", c.data.image_size},
        {"seed", c.data.seed}}},
      {"models", models},
      {"protect",
       {{"N", p.N},
        {"K1", p.K1},
        {"K2", p.K2},
        {"alpha", p.alpha},
        {"budget", p.budget},
        {"beta_lr", p.beta_lr},
        {"eta", p.weights.eta},
        {"lam", p.weights.lam},
        {"lam_prior", p.weights.lam_prior},
        {"delta_noise", p.weights.delta_noise},
        {"style_sign", p.style_sign},
        {"J", p.J},
        {"toggles", {{"denoise", p.toggles.denoise}, {"upscale", p.toggles.upscale}, {"style", p.toggles.style}}},
        {"transforms", transforms}}},
      {"attack", attacks},
      {"mimic",
       {{"method", m.method == MimicMethod::dreambooth_full ? "dreambooth" : "textual_inversion"},
        {"steps", m.steps},
        {"lr", m.lr},
        {"optimizer", m.optimizer == MimicOptimizer::adam ? "adam" : "sgd"},
        {"lam_prior", m.lam_prior},
        {"preprocessing", m.preprocessing ? attack_json(*m.preprocessing) : json(nullptr)}}},
      {"report",
       {{"label", c.report.label},
        {"with_ims", c.report.with_ims},
        {"n_generate", c.report.n_generate},
        {"precision_k", c.report.precision_k},
        {"formats", c.report.formats}}},
  };
}

/// Ablation-row name for a protection setup.
inline std::string method_label(const RunConfig& c) {
  if (!c.report.label.empty()) return c.report.label;
  const ProtectionConfig& p = c.protect;
  if (p.budget == 0.0) return "no_protect";
  const LossToggles& t = p.toggles;
  if (t.denoise && t.upscale && t.style) return "full";
  std::string s;
  auto add = [&s](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(t.denoise, "denoise");
  add(t.upscale, "upscale");
  add(t.style, "style");
  return s;
}

// ---------------------------------------------------------------- zoo cache

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline fs::path cache_root() {
  if (const char* env = std::getenv(kCacheEnv); env && *env) return fs::path(env);
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "styleguard";
  return fs::path(".styleguard-cache");
}

inline fs::path zoo_dir(const ZooConfig& z) {
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a(models_json(z).dump())));
  return cache_root() / (std::string("zoo-") + hex);
}

/// Load the pre-trained ensemble for `z`, training and caching it on first use.
inline ModelZoo ensure_zoo(const ZooConfig& z, const std::function<void(const std::string&)>& log = {}) {
  const fs::path dir = zoo_dir(z);
  if (fs::exists(dir / "models.json")) {
    try {
      return load_zoo(dir, z.n_surrogates);
    } catch (const DataError& e) {
      if (log) log(std::string("cache entry unreadable, rebuilding: ") + e.what());
    }
  }
  if (log) log("training model zoo into " + dir.string());
  ModelZoo zoo = build_zoo(z, log);
  const fs::path tmp = dir.string() + ".tmp" + std::to_string(fnv1a(std::to_string(std::rand())));
  fs::remove_all(tmp);
  save_zoo(tmp, zoo);
  write_file_atomic(tmp / "models.json", models_json(z).dump(2) + "\n");
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) fs::remove_all(tmp);  // a concurrent writer got there first
  return zoo;
}

// ---------------------------------------------------------------- data

inline Tensor load_source(const std::string& source, const std::string& style, std::uint64_t palette,
                          const DataConfig& d, const char* tag) {
  if (source == "synthetic") {
    return generate_style_set(parse_style(style), d.n_images, d.image_size, palette, derive_seed(d.seed, tag));
  }
  return load_folder(source, d.image_size);
}

/// The protected set's source images and the style target.
inline std::pair<Tensor, Tensor> load_data(const DataConfig& d) {
  return {load_source(d.source, d.style, d.palette, d, "clean"),
          load_source(d.target_source, d.target_style, d.target_palette, d, "target")};
}

/// Accept a run directory (uses its `sub` folder) or a plain image folder.
inline fs::path image_folder(const fs::path& p, const std::string& sub) {
  if (fs::is_directory(p / sub)) return p / sub;
  return p;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------- commands

using Log = std::function<void(const std::string&)>;

struct ProtectOutcome {
  fs::path run_dir;
  RunArtifacts artifacts;
  double linf_quantized = 0.0;
};

/// Craft protected images and write a self-describing run directory.
inline ProtectOutcome cmd_protect(const RunConfig& cfg, const fs::path& out, const Log& log = {}) {
  const auto [xc, xt] = load_data(cfg.data);
  const ModelZoo zoo = ensure_zoo(cfg.models, log);
  if (xt.shape().h != xc.shape().h || xt.shape().w != xc.shape().w) throw DataError("clean and target sizes differ");
  Ensemble ens{zoo.surrogates, zoo.crafting_purifiers(), zoo.encoders};
  ProtectionConfig p = cfg.protect;
  p.seed = cfg.seed;
  ProtectOutcome o;
  o.run_dir = out;
  o.artifacts = run_styleguard(p, xc, xt, std::move(ens), zoo.schedule, [&](int i, const LossTraceRow& r) {
    if (log && (i + 1) % 10 == 0) log("iteration " + std::to_string(i + 1) + " total " + fmt(r.total));
  });
  const RunArtifacts& art = o.artifacts;

  fs::create_directories(out);
  write_batch(out / "clean", xc);
  write_batch(out / "target", xt);
  write_batch(out / "protected", art.x_protected);
  const Tensor reloaded = load_folder(out / "protected");
  o.linf_quantized = max_abs_diff(reloaded, xc);

  std::ostringstream csv;
  csv << "iteration,denoise,upscale,style,total\n";
  for (std::size_t i = 0; i < art.loss_trace.size(); ++i) {
    const LossTraceRow& r = art.loss_trace[i];
    csv << i << "," << fmt(r.denoise) << "," << fmt(r.upscale) << "," << fmt(r.style) << "," << fmt(r.total) << "\n";
  }
  write_file_atomic(out / "loss_trace.csv", csv.str());
  for (std::size_t k = 0; k < art.surrogate_checkpoints.size(); ++k) {
    save_checkpoint(out / ("surrogate" + std::to_string(k) + ".sglab"), art.surrogate_checkpoints[k], zoo.schedule);
  }
  write_json(out / "config.resolved.json", resolved_json(cfg));
  write_json(out / "run.json", {{"seed", cfg.seed},
                                {"method", method_label(cfg)},
                                {"complete", art.complete},
                                {"error", art.error},
                                {"iterations", art.loss_trace.size()},
                                {"budget", p.budget},
                                {"linf", max_abs_diff(art.x_protected, xc)},
                                {"linf_png", o.linf_quantized},
                                {"n_images", xc.shape().n},
                                {"models", zoo_dir(cfg.models).filename().string()}});
  return o;
}

/// Apply every configured attack to a run's protected set; one sibling folder per attack.
inline std::vector<fs::path> cmd_attack(const RunConfig& cfg, const fs::path& run, const fs::path& out,
                                        const Log& log = {}) {
  if (cfg.attack.empty()) throw ConfigError("attack: no attacks configured");
  const fs::path src = image_folder(run, "protected");
  const Tensor x = load_folder(src);
  std::optional<ModelZoo> zoo;
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < cfg.attack.size(); ++i) {
    const AttackSpec& a = cfg.attack[i];
    if (std::holds_alternative<PurifierSpec>(a) && !zoo) zoo = ensure_zoo(cfg.models, log);
    Rng rng(derive_seed(cfg.seed, "attack-" + std::to_string(i)));
    Tensor y;
    if (const auto* t = std::get_if<TransformSpec>(&a)) {
      y = apply_transform(*t, x, rng);
    } else {
      y = preprocess(a, x, *zoo, rng);
    }
    const fs::path dir = out / attack_name(a);
    write_batch(dir, y);
    write_json(dir / "provenance.json", {{"source", fs::absolute(src).lexically_normal().string()},
                                         {"attack", attack_json(a)},
                                         {"name", attack_name(a)},
                                         {"seed", cfg.seed}});
    if (log) log("wrote " + dir.string());
    written.push_back(dir);
  }
  return written;
}

struct MimicOutcome {
  MimicResult result;
  Tensor generated;
};

/// Fine-tune a copy of the base model on a folder of images and sample from it.
inline MimicOutcome cmd_mimic(const RunConfig& cfg, const fs::path& images, const fs::path& out, const Log& log = {}) {
  const Tensor x = load_folder(image_folder(images, "protected"), cfg.data.image_size);
  const ModelZoo zoo = ensure_zoo(cfg.models, log);
  const MimicrySpec& spec = cfg.mimic;
  Rng pre_rng(derive_seed(cfg.seed, "preprocess"));
  const Tensor train = spec.preprocessing ? preprocess(*spec.preprocessing, x, zoo, pre_rng) : x;
  const int size = x.shape().h;
  const Tensor prior = sample_reverse(zoo.base(), zoo.schedule, spec.prior_token, x.shape().n, size, size,
                                      derive_seed(cfg.seed, "mimic-prior"));
  Rng ft_rng(derive_seed(cfg.seed, "mimic-finetune"));
  MimicOutcome o{mimic_finetune(zoo.base(), train, prior, spec, zoo.schedule, ft_rng), {}};
  o.generated = generate_set(o.result.model, spec.instance_token, cfg.report.n_generate, zoo.schedule, size,
                             derive_seed(cfg.seed, "mimic-generate"));
  fs::create_directories(out);
  save_checkpoint(out / "model.sglab", o.result.model, zoo.schedule);
  write_batch(out / "generated", o.generated);
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < o.result.loss_trace.size(); ++i) csv << i << "," << fmt(o.result.loss_trace[i]) << "\n";
  write_file_atomic(out / "loss_trace.csv", csv.str());
  write_json(out / "mimic.json", {{"seed", cfg.seed},
                                  {"source", fs::absolute(images).lexically_normal().string()},
                                  {"n_train", x.shape().n},
                                  {"config", resolved_json(cfg)["mimic"]}});
  return o;
}

struct ReportRow {
  std::string run_id;
  std::string method;
  MetricsReport metrics;
  std::uint64_t seed = 0;
};

struct EvaluateOutcome {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
  std::vector<std::string> methods;
  std::vector<std::string> attacks;
};

inline std::optional<json> run_meta(const fs::path& dir) {
  if (fs::exists(dir / "run.json")) return read_json(dir / "run.json");
  return std::nullopt;
}

/// Mimic on the clean set and on each protected set (under each attack
/// column) with matched seeds; write metrics.csv, report.json, ablation.csv.
inline EvaluateOutcome cmd_evaluate(const RunConfig& cfg, const fs::path& clean_run,
                                    const std::vector<fs::path>& protected_runs, const fs::path& out,
                                    const Log& log = {}) {
  if (protected_runs.empty()) throw ConfigError("evaluate: at least one protected run is required");
  const Tensor xc = load_folder(image_folder(clean_run, "clean"), cfg.data.image_size);
  const ModelZoo zoo = ensure_zoo(cfg.models, log);
  EvalSettings s;
  s.mimic = cfg.mimic;
  s.n_generate = cfg.report.n_generate;
  s.precision_k = cfg.report.precision_k;
  s.seed = cfg.seed;
  s.with_ims = cfg.report.with_ims;

  EvaluateOutcome o;
  const auto clean_meta = run_meta(clean_run);
  std::vector<std::optional<AttackSpec>> columns{std::nullopt};
  for (const auto& a : cfg.attack) columns.emplace_back(a);
  for (const auto& c : columns) o.attacks.push_back(c ? attack_name(*c) : "none");

  if (log) log("clean arm");
  s.mimic.preprocessing.reset();
  const Tensor clean_gen = mimic_and_generate(zoo, xc, s, std::nullopt);
  for (const fs::path& run : protected_runs) {
    const auto meta = run_meta(run);
    const Tensor xp = load_folder(image_folder(run, "protected"), cfg.data.image_size);
    if (xp.shape() != xc.shape()) throw DataError("evaluate: " + run.string() + " does not match the clean set's shape");
    std::string method = run.filename().string();
    std::uint64_t run_seed = cfg.seed;
    if (meta) {
      method = meta->value("method", method);
      run_seed = meta->value("seed", cfg.seed);
      const double budget = meta->value("budget", 8.0 / 255.0);
      const double linf = max_abs_diff(xp, xc);
      if (linf > budget + 1.0 / 255.0 + 1e-9) {
        o.warnings.push_back(run.string() + ": L-inf distance " + fmt(linf) + " exceeds budget + 1/255");
      }
    }
    if (clean_meta && meta && clean_meta->value("seed", 0ULL) != meta->value("seed", 0ULL)) {
      o.warnings.push_back("seed mismatch: " + clean_run.string() + " vs " + run.string());
    }
    if (std::find(o.methods.begin(), o.methods.end(), method) == o.methods.end()) o.methods.push_back(method);
    for (const auto& col : columns) {
      s.mimic.preprocessing = col;
      if (log) log(method + " / " + (col ? attack_name(*col) : std::string("none")));
      const Tensor gen = mimic_and_generate(zoo, xp, s, col);
      ReportRow r{run.filename().string(), method, score_generations(clean_gen, gen, xc, s), run_seed};
      o.rows.push_back(std::move(r));
    }
  }

  fs::create_directories(out);
  const auto& formats = cfg.report.formats;
  auto wants = [&](const char* f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };
  if (wants("csv")) {
    std::ostringstream csv;
    csv << "run_id,method,preprocessing,fid,precision,ims,success_rate,seeds\n";
    for (const auto& r : o.rows) {
      csv << r.run_id << "," << r.method << "," << r.metrics.preprocessing << "," << fmt(r.metrics.fid) << ","
          << fmt(r.metrics.precision) << "," << (r.metrics.ims ? fmt(*r.metrics.ims) : "") << ","
          << (r.metrics.success_rate ? fmt(*r.metrics.success_rate) : "") << "," << cfg.seed << ":" << r.seed
          << "\n";
    }
    write_file_atomic(out / "metrics.csv", csv.str());
    if (o.methods.size() > 1) {
      std::ostringstream grid;
      grid << "method";
      for (const auto& a : o.attacks) grid << "," << a << " fid," << a << " precision";
      grid << "\n";
      for (const auto& m : o.methods) {
        grid << m;
        for (const auto& a : o.attacks) {
          const auto it = std::find_if(o.rows.begin(), o.rows.end(), [&](const ReportRow& r) {
            return r.method == m && r.metrics.preprocessing == a;
          });
          grid << "," << fmt(it->metrics.fid) << "," << fmt(it->metrics.precision);
        }
        grid << "\n";
      }
      write_file_atomic(out / "ablation.csv", grid.str());
    }
  }
  if (wants("json")) {
    json rows = json::array();
    for (const auto& r : o.rows) {
      rows.push_back({{"run_id", r.run_id},
                      {"method", r.method},
                      {"preprocessing", r.metrics.preprocessing},
                      {"fid", r.metrics.fid},
                      {"precision", r.metrics.precision},
                      {"ims", r.metrics.ims ? json(*r.metrics.ims) : json(nullptr)},
                      {"n_clean_generated", r.metrics.n_clean_generated},
                      {"n_protected_generated", r.metrics.n_protected_generated},
                      {"n_train", r.metrics.n_train},
                      {"mimic_method", r.metrics.method},
                      {"run_seed", r.seed}});
    }
    write_json(out / "report.json", {{"seed", cfg.seed},
                                     {"clean", clean_run.filename().string()},
                                     {"methods", o.methods},
                                     {"attacks", o.attacks},
                                     {"rows", rows},
                                     {"warnings", o.warnings},
                                     {"config", resolved_json(cfg)}});
  }
  return o;
}

// ---------------------------------------------------------------- plot

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("CSV lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvTable read_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw DataError("empty CSV " + p.string());
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) throw DataError("ragged CSV row in " + p.string());
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw DataError("CSV has no data rows: " + p.string());
  return t;
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    switch (ch) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += ch;
    }
  }
  return o;
}

/// Grouped bar chart: one group per attack, one bar per method.
inline std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& groups,
                                 const std::vector<std::string>& series,
                                 const std::map<std::pair<std::string, std::string>, double>& value) {
  static const char* colors[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"};
  double vmax = 0.0;
  for (const auto& [k, v] : value) vmax = std::max(vmax, v);
  if (vmax <= 0) vmax = 1.0;
  const int bar = 18, gap = 24, left = 60, top = 40, plot_h = 220;
  const int group_w = static_cast<int>(series.size()) * bar + gap;
  const int width = left + static_cast<int>(groups.size()) * group_w + 160;
  const int height = top + plot_h + 90;
  std::ostringstream s;
  s << std::setprecision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - 150 << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"4\" y=\"" << top + 10 << "\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(vmax)
    << "</text>\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const int gx = left + static_cast<int>(g) * group_w + gap / 2;
    s << "<g class=\"group\" data-attack=\"" << xml_escape(groups[g]) << "\">\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
      const auto it = value.find({groups[g], series[k]});
      if (it == value.end()) continue;
      const double h = plot_h * std::max(0.0, it->second) / vmax;
      s << "<rect x=\"" << gx + static_cast<int>(k) * bar << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar - 2
        << "\" height=\"" << h << "\" fill=\"" << colors[k % 7] << "\"><title>" << xml_escape(series[k]) << ": "
        << fmt(it->second) << "</title></rect>\n";
    }
    s << "<text x=\"" << gx << "\" y=\"" << top + plot_h + 14 << "\" font-family=\"sans-serif\" font-size=\"9\" "
      << "transform=\"rotate(30 " << gx << " " << top + plot_h + 14 << ")\">" << xml_escape(groups[g]) << "</text>\n";
    s << "</g>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const int y = top + 14 * static_cast<int>(k);
    s << "<rect x=\"" << width - 140 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << colors[k % 7]
      << "\"/><text x=\"" << width - 126 << "\" y=\"" << y + 9 << "\" font-family=\"sans-serif\" font-size=\"10\">"
      << xml_escape(series[k]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

/// Bar charts of FID and precision per attack per method, plus a manifest.
inline json cmd_plot(const fs::path& csv_path, const fs::path& out) {
  const CsvTable t = read_csv(csv_path);
  const std::size_t cm = t.column("method"), cp = t.column("preprocessing");
  std::vector<std::string> groups, series;
  auto remember = [](std::vector<std::string>& v, const std::string& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& r : t.rows) {
    remember(groups, r[cp]);
    remember(series, r[cm]);
  }
  fs::create_directories(out);
  json figures = json::array();
  for (const std::string metric : {"fid", "precision"}) {
    const std::size_t cv = t.column(metric);
    std::map<std::pair<std::string, std::string>, double> value;
    for (const auto& r : t.rows) {
      try {
        value[{r[cp], r[cm]}] = std::stod(r[cv]);
      } catch (const std::exception&) {
        throw DataError("non-numeric " + metric + " value '" + r[cv] + "'");
      }
    }
    const std::string file = metric + ".svg";
    write_file_atomic(out / file, bar_chart_svg(metric + " per attack", groups, series, value));
    figures.push_back({{"file", file}, {"metric", metric}, {"groups", groups}, {"series", series}});
  }
  const json manifest = {{"source", csv_path.filename().string()}, {"figures", figures}};
  write_json(out / "figures.json", manifest);
  return manifest;
}

}  // namespace sguard::app
