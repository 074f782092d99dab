#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "styleguard/errors.hpp"
#include "styleguard/rng.hpp"
#include "styleguard/tensor.hpp"

namespace sguard {

/// Procedural style families. Two sets drawn from different kinds are
/// style-distinct by construction.
enum class StyleKind { stripes, blobs, checker, gradient };

inline constexpr std::array<StyleKind, 4> kAllStyles = {StyleKind::stripes, StyleKind::blobs,
                                                        StyleKind::checker, StyleKind::gradient};

inline std::string style_name(StyleKind k) {
  switch (k) {
    case StyleKind::stripes: return "stripes";
    case StyleKind::blobs: return "blobs";
    case StyleKind::checker: return "checker";
    case StyleKind::gradient: return "gradient";
  }
  return "?";
}

inline StyleKind parse_style(const std::string& s) {
  for (StyleKind k : kAllStyles)
    if (style_name(k) == s) return k;
  throw ConfigError("unknown style '" + s + "'");
}

struct Palette {
  std::array<std::array<double, 3>, 3> colors{};
};

inline Palette make_palette(std::uint64_t palette_seed) {
  Rng rng(derive_seed(palette_seed, "palette"));
  Palette p;
  for (auto& c : p.colors)
    for (double& v : c) v = 0.1 + 0.8 * rng.uniform();
  return p;
}

namespace detail {

inline std::array<double, 3> jitter(const std::array<double, 3>& c, Rng& rng) {
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] = std::clamp(c[static_cast<std::size_t>(i)] + 0.06 * (rng.uniform() - 0.5), 0.0, 1.0);
  return out;
}

inline void put(Tensor& x, int n, int y, int xx, const std::array<double, 3>& a, const std::array<double, 3>& b,
                double mix) {
  for (int c = 0; c < 3; ++c) {
    x.at(n, c, y, xx) = std::clamp((1.0 - mix) * a[static_cast<std::size_t>(c)] + mix * b[static_cast<std::size_t>(c)], 0.0, 1.0);
  }
}

}  // namespace detail

/// n images of one style at size x size, values in [0,1].
inline Tensor generate_style_set(StyleKind kind, int n, int size, std::uint64_t palette_seed,
                                 std::uint64_t seed) {
  if (n < 1 || size < 4) throw ConfigError("style set needs n >= 1 and size >= 4");
  const Palette pal = make_palette(palette_seed);
  Rng rng(derive_seed(seed, "style-" + style_name(kind)));
  Tensor x(Shape{n, 3, size, size});
  const double scale = size / 16.0;
  for (int i = 0; i < n; ++i) {
    const auto c0 = detail::jitter(pal.colors[0], rng);
    const auto c1 = detail::jitter(pal.colors[1], rng);
    const auto c2 = detail::jitter(pal.colors[2], rng);
    switch (kind) {
      case StyleKind::stripes: {
        const double theta = std::numbers::pi * rng.uniform();
        const double period = scale * (3.0 + 3.0 * rng.uniform());
        const double phase = 2 * std::numbers::pi * rng.uniform();
        for (int y = 0; y < size; ++y)
          for (int xx = 0; xx < size; ++xx) {
            const double u = xx * std::cos(theta) + y * std::sin(theta);
            const double m = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * u / period + phase);
            detail::put(x, i, y, xx, c0, c1, m);
          }
        break;
      }
      case StyleKind::blobs: {
        struct Blob {
          double cy, cx, r;
          std::array<double, 3> col;
        };
        std::array<Blob, 3> blobs{};
        for (std::size_t b = 0; b < blobs.size(); ++b) {
          blobs[b] = Blob{size * rng.uniform(), size * rng.uniform(), scale * (2.0 + 2.5 * rng.uniform()),
                          b % 2 == 0 ? c1 : c2};
        }
        for (int y = 0; y < size; ++y)
          for (int xx = 0; xx < size; ++xx) {
            std::array<double, 3> col = c0;
            for (const Blob& b : blobs) {
              const double d2 = (y - b.cy) * (y - b.cy) + (xx - b.cx) * (xx - b.cx);
              const double m = std::exp(-d2 / (2 * b.r * b.r));
              for (std::size_t c = 0; c < 3; ++c) col[c] = (1 - m) * col[c] + m * b.col[c];
            }
            detail::put(x, i, y, xx, col, col, 0.0);
          }
        break;
      }
      case StyleKind::checker: {
        const int cell = std::max(1, static_cast<int>(std::lround(scale * (2 + rng.integer(0, 2)))));
        const int oy = rng.integer(0, cell - 1);
        const int ox = rng.integer(0, cell - 1);
        for (int y = 0; y < size; ++y)
          for (int xx = 0; xx < size; ++xx) {
            const bool odd = (((y + oy) / cell) + ((xx + ox) / cell)) % 2 == 1;
            detail::put(x, i, y, xx, c0, c2, odd ? 1.0 : 0.0);
          }
        break;
      }
      case StyleKind::gradient: {
        const double theta = 2 * std::numbers::pi * rng.uniform();
        const double cx = std::cos(theta);
        const double cy = std::sin(theta);
        const double span = (size - 1) * (std::abs(cx) + std::abs(cy));
        const double lo = std::min(0.0, (size - 1) * cx) + std::min(0.0, (size - 1) * cy);
        for (int y = 0; y < size; ++y)
          for (int xx = 0; xx < size; ++xx) {
            const double m = span > 0 ? ((xx * cx + y * cy) - lo) / span : 0.0;
            detail::put(x, i, y, xx, c1, c2, m);
          }
        break;
      }
    }
  }
  return x;
}

/// Mixed-style pretraining corpus: `per_style` images of each kind, with a
/// fresh palette every `per_palette` images.
inline Tensor generic_corpus(int per_style, int size, std::uint64_t seed, int per_palette = 4) {
  Tensor out;
  int batch = 0;
  for (StyleKind k : kAllStyles) {
    for (int done = 0; done < per_style; done += per_palette) {
      const int n = std::min(per_palette, per_style - done);
      const Tensor part = generate_style_set(k, n, size, derive_seed(seed, "corpus-palette") + static_cast<std::uint64_t>(batch),
                                             derive_seed(seed, "corpus") + static_cast<std::uint64_t>(batch));
      out = out.empty() ? part : concat_batch(out, part);
      ++batch;
    }
  }
  return out;
}

}  // namespace sguard
