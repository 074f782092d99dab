#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "styleguard/image_io.hpp"
#include "test_support.hpp"

using namespace sguard;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sguard_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Quantize, RoundsToNearestAndClamps) {
  EXPECT_EQ(quantize(0.0), 0);
  EXPECT_EQ(quantize(1.0), 255);
  EXPECT_EQ(quantize(-0.3), 0);
  EXPECT_EQ(quantize(1.7), 255);
  EXPECT_EQ(quantize(0.5), 128);  // 127.5 rounds half away from zero
  EXPECT_EQ(quantize(10.4 / 255.0), 10);
  EXPECT_EQ(quantize(10.6 / 255.0), 11);
}

TEST(Png, RoundTripIsExactOnEightBitValues) {
  const fs::path dir = scratch("roundtrip");
  Tensor x(Shape{1, 3, 5, 7});
  Rng rng(1);
  for (double& v : x.vec()) v = rng.integer(0, 255) / 255.0;
  write_png(dir / "a.png", to_image8(x, 0));
  const Tensor back = image_to_tensor(read_png(dir / "a.png"));
  EXPECT_EQ(back.shape(), x.shape());
  EXPECT_LE(max_abs_diff(back, x), 1e-15);
}

TEST(Png, EncodingIsDeterministic) {
  const Tensor x = sguard::testing::random_images(Shape{1, 3, 8, 8}, 2);
  std::vector<unsigned char> a, b;
  encode_png(to_image8(x, 0), a);
  encode_png(to_image8(x, 0), b);
  EXPECT_EQ(a, b);
}

TEST(Png, BatchRoundTripWithinHalfAStep) {
  const fs::path dir = scratch("batch");
  const Tensor x = sguard::testing::random_images(Shape{4, 3, 6, 6}, 3);
  const auto paths = write_batch(dir, x);
  ASSERT_EQ(paths.size(), 4u);
  EXPECT_EQ(paths[2].filename(), "002.png");
  const Tensor back = load_folder(dir);
  EXPECT_EQ(back.shape(), x.shape());
  EXPECT_LE(max_abs_diff(back, x), 0.5 / 255.0 + 1e-12);
}

TEST(Png, BudgetSurvivesQuantization) {
  // Property: a perturbation within the budget stays within budget + 1/255
  // after both images are written as 8-bit PNGs and decoded.
  const double budget = 8.0 / 255.0;
  const fs::path dir = scratch("budget");
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor clean(Shape{2, 3, 5, 5});
    for (double& v : clean.vec()) v = rng.uniform();
    Tensor prot = clean;
    for (double& v : prot.vec()) v = std::clamp(v + budget * (2 * rng.uniform() - 1), 0.0, 1.0);
    ASSERT_LE(max_abs_diff(prot, clean), budget + 1e-12);
    write_batch(dir / "c", clean);
    write_batch(dir / "p", prot);
    EXPECT_LE(max_abs_diff(load_folder(dir / "p"), clean), budget + 1.0 / 255.0 + 1e-9);
    EXPECT_LE(max_abs_diff(load_folder(dir / "p"), load_folder(dir / "c")), budget + 1.0 / 255.0 + 1e-9);
  }
}

TEST(Png, ResizeOnLoad) {
  const fs::path dir = scratch("resize");
  const Tensor x(Shape{1, 3, 12, 12}, 0.4);
  write_batch(dir, x);
  const Tensor small = load_folder(dir, 6);
  EXPECT_EQ(small.shape(), (Shape{1, 3, 6, 6}));
  for (double v : small.vec()) EXPECT_NEAR(v, 102.0 / 255.0, 1e-12);
}

TEST(Png, BadInputsAreDataErrors) {
  const fs::path dir = scratch("bad");
  {
    std::ofstream f(dir / "junk.png");
    f << "not a png at all";
  }
  EXPECT_THROW(read_png(dir / "junk.png"), DataError);
  EXPECT_THROW(read_png(dir / "missing.png"), DataError);
  EXPECT_THROW(load_folder(dir / "nowhere"), DataError);
  const fs::path empty = scratch("empty");
  EXPECT_THROW(load_folder(empty), DataError);

  const fs::path mixed = scratch("mixed");
  write_png(mixed / "a.png", to_image8(Tensor(Shape{1, 3, 4, 4}, 0.1), 0));
  write_png(mixed / "b.png", to_image8(Tensor(Shape{1, 3, 5, 5}, 0.1), 0));
  EXPECT_THROW(load_folder(mixed), DataError);
  EXPECT_EQ(load_folder(mixed, 4).shape(), (Shape{2, 3, 4, 4}));
}

TEST(Tile, PlacesImagesInRowMajorGrid) {
  Tensor x(Shape{3, 3, 2, 2});
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 2; ++y)
        for (int xx = 0; xx < 2; ++xx) x.at(n, c, y, xx) = n / 255.0;
  const Image8 img = tile(x, 2);
  EXPECT_EQ(img.width, 4);
  EXPECT_EQ(img.height, 4);
  EXPECT_EQ(img.rgb[(0 * 4 + 3) * 3], 1);  // top row, second tile
  EXPECT_EQ(img.rgb[(2 * 4 + 0) * 3], 2);  // second row, first tile
  EXPECT_EQ(img.rgb[(3 * 4 + 3) * 3], 0);  // empty slot
}
