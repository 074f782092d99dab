// Protect four stripe images toward a gradient style with a deliberately tiny
// model zoo, then show how far each purifier moves the result.

#include <cstdio>

#include "styleguard/app.hpp"

using namespace sguard;

int main() {
  ZooConfig z;
  z.image_size = 8;
  z.T = 20;
  z.beta_end = 0.3;
  z.corpus_per_style = 8;
  z.pretrain_steps = 150;
  z.purifier_steps = 150;
  z.batch = 8;
  const ModelZoo zoo = build_zoo(z, [](const std::string& s) { std::printf("  %s\n", s.c_str()); });

  app::DataConfig d;
  d.n_images = 4;
  d.image_size = z.image_size;
  const auto [xc, xt] = app::load_data(d);

  ProtectionConfig p;
  p.N = 15;
  p.K1 = 1;
  p.K2 = 2;
  p.seed = 3;
  const RunArtifacts art =
      run_styleguard(p, xc, xt, Ensemble{zoo.surrogates, zoo.crafting_purifiers(), zoo.encoders}, zoo.schedule);
  if (!art.complete) {
    std::printf("numeric failure: %s\n", art.error.c_str());
    return 4;
  }

  const LossTraceRow& first = art.loss_trace.front();
  const LossTraceRow& last = art.loss_trace.back();
  std::printf("objective %.4f -> %.4f over %zu iterations\n", first.total, last.total, art.loss_trace.size());
  std::printf("linf %.5f (budget %.5f)\n", max_abs_diff(art.x_protected, xc), p.budget);

  Rng rng(11);
  const Tensor pure = diffpure(art.x_protected, 5, zoo.purifier, zoo.schedule, rng);
  const Tensor up = noise_upscale(art.x_protected, 0.05, zoo.upscaler, zoo.schedule, rng);
  std::printf("after diffpure(5)       linf to clean %.4f\n", max_abs_diff(pure, xc));
  std::printf("after noise_upscale     linf to clean %.4f\n", max_abs_diff(up, xc));
  return 0;
}
