#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "styleguard/autograd.hpp"
#include "styleguard/checkpoint.hpp"
#include "styleguard/errors.hpp"
#include "styleguard/tensor.hpp"

namespace sguard {

/// 8-bit RGB raster.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;
};

inline unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline Image8 to_image8(const Tensor& batch, int index) {
  const Shape s = batch.shape();
  if (s.c != 3) throw ContractError("to_image8 expects 3 channels");
  Image8 img{s.w, s.h, std::vector<unsigned char>(static_cast<std::size_t>(s.w) * s.h * 3)};
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c)
        img.rgb[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] = quantize(batch.at(index, c, y, x));
  return img;
}

inline void encode_png(const Image8& img, std::vector<unsigned char>& out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* buf = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(p));
        buf->insert(buf->end(), data, data + len);
      },
      [](png_structp) {});
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  std::vector<unsigned char> bytes;
  encode_png(img, bytes);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

inline Image8 read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("png_create_read_struct failed");
  Image8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// Decode to a [1,3,H,W] tensor in [0,1]; resized (bilinear) when `size` > 0.
inline Tensor image_to_tensor(const Image8& img, int size = 0) {
  Tensor t(Shape{1, 3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0;
  if (size <= 0 || (img.height == size && img.width == size)) return t;
  ag::Graph g;
  return ag::crop_resize(g.constant(t), 0, 0, img.height, img.width, size, size).value();
}

/// Write each image of `batch` as dir/<prefix>NNN.png.
inline std::vector<std::filesystem::path> write_batch(const std::filesystem::path& dir, const Tensor& batch,
                                                      const std::string& prefix = "") {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < batch.shape().n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03d.png", i);
    const std::filesystem::path p = dir / (prefix + name);
    write_png(p, to_image8(batch, i));
    paths.push_back(p);
  }
  return paths;
}

/// Load every *.png in `dir` (sorted by name) into one batch.
inline Tensor load_folder(const std::filesystem::path& dir, int size = 0) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no PNG images in " + dir.string());
  Tensor out;
  for (const auto& f : files) {
    const Tensor t = image_to_tensor(read_png(f), size);
    if (!out.empty() && (t.shape().h != out.shape().h || t.shape().w != out.shape().w)) {
      throw DataError("images in " + dir.string() + " differ in size; pass an image_size");
    }
    out = out.empty() ? t : concat_batch(out, t);
  }
  return out;
}

/// Tile a batch into one grid image (for inspection).
inline Image8 tile(const Tensor& batch, int cols) {
  const Shape s = batch.shape();
  const int rows = (s.n + cols - 1) / cols;
  Image8 img{cols * s.w, rows * s.h, std::vector<unsigned char>(static_cast<std::size_t>(cols * s.w) * rows * s.h * 3)};
  for (int i = 0; i < s.n; ++i) {
    const int oy = (i / cols) * s.h;
    const int ox = (i % cols) * s.w;
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        for (int c = 0; c < 3; ++c)
          img.rgb[(static_cast<std::size_t>(oy + y) * img.width + ox + x) * 3 + c] = quantize(batch.at(i, c, y, x));
  }
  return img;
}

}  // namespace sguard
