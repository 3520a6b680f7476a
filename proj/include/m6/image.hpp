#pragma once

#include <filesystem>
#include <vector>

namespace m6::img {

/// RGB image, row-major [h][w][3], values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;

  double at(int y, int x, int c) const { return rgb[(y * width + x) * 3 + c]; }
  double& at(int y, int x, int c) { return rgb[(y * width + x) * 3 + c]; }
  long long pixels() const { return 1ll * width * height; }
};

/// Reads a PNG (via libpng) or a PPM (P3 or P6). Throws
/// std::runtime_error on missing or undecodable files.
Image load_image(const std::filesystem::path& path);

/// ASCII PPM writer; channel values round to 0..255.
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Bilinear resample to side x side with pixel-center alignment, so an
/// exact 1:1 resize is the identity and corners keep source values.
Image resize_bilinear(const Image& image, int side);

Image load_and_resize(const std::filesystem::path& path, int side = 32);

}  // namespace m6::img
