#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "m6/image.hpp"
#include "m6/patches.hpp"
#include "m6/rng.hpp"
#include "m6/tensor.hpp"
#include "testutil.hpp"

using namespace m6;

TEST_CASE("split/assemble round trip is exact") {
  img::Image im = testutil::make_pattern(6, 32);
  patches::RawPatches raw = patches::split_patches(im, 8);
  CHECK(raw.rows == 4);
  CHECK(raw.cols == 4);
  CHECK(raw.patch == 8);
  CHECK(raw.values.shape() == Shape{16, 192});

  img::Image back = patches::assemble_patches(raw.values, 4, 4, 8);
  CHECK(testutil::image_mse(im, back) == 0.0);
}

TEST_CASE("patch values are row-major pixels of each tile") {
  img::Image im = testutil::make_pattern(1, 16);  // horizontal gradient
  patches::RawPatches raw = patches::split_patches(im, 8);
  // First patch, first pixel = image (0,0); second patch starts at x=8.
  CHECK(raw.values.at(0, 0) == im.at(0, 0, 0));
  CHECK(raw.values.at(1, 0) == im.at(0, 8, 0));
  CHECK(raw.values.at(2, 0) == im.at(8, 0, 0));
}

TEST_CASE("split rejects sizes that do not tile") {
  img::Image im = testutil::make_pattern(0, 20);
  CHECK_THROWS(patches::split_patches(im, 8));
}

TEST_CASE("embed_patches projects with gradients") {
  img::Image im = testutil::make_pattern(4, 16);
  patches::RawPatches raw = patches::split_patches(im, 8);
  Rng rng(3);
  Tensor proj = Tensor::randn({192, 24}, rng, 0.05, true);
  patches::PatchSequence seq = patches::embed_patches(raw, proj);
  CHECK(seq.features.shape() == Shape{4, 24});

  auto rep = testutil::fd_check(
      [&] {
        patches::PatchSequence s = patches::embed_patches(raw, proj);
        return sum_all(mul(s.features, s.features));
      },
      {proj});
  INFO(rep.worst_where);
  CHECK(rep.worst < 1e-3);
}

TEST_CASE("ppm write/load round trip at 8-bit resolution") {
  auto dir = testutil::fresh_dir("patches_io_work");
  img::Image im = testutil::make_pattern(3, 16);
  // Snap to exact 8-bit levels so the round trip is lossless.
  for (double& v : im.rgb) v = std::round(v * 255.0) / 255.0;
  img::write_ppm(dir / "x.ppm", im);
  img::Image back = img::load_image(dir / "x.ppm");
  CHECK(back.width == 16);
  CHECK(back.height == 16);
  CHECK(testutil::image_mse(im, back) < 1e-12);
}

TEST_CASE("bilinear resize: identity at same size, corner alignment") {
  img::Image im = testutil::make_pattern(6, 16);
  img::Image same = img::resize_bilinear(im, 16);
  CHECK(testutil::image_mse(im, same) == 0.0);

  img::Image up = img::resize_bilinear(im, 32);
  CHECK(up.width == 32);
  // Pixel-center alignment keeps the corners.
  CHECK(up.at(0, 0, 0) == doctest::Approx(im.at(0, 0, 0)).epsilon(1e-12));
  CHECK(up.at(31, 31, 2) == doctest::Approx(im.at(15, 15, 2)).epsilon(1e-12));
}
