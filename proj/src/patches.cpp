#include "m6/patches.hpp"

#include <stdexcept>

namespace m6::patches {

RawPatches split_patches(const img::Image& image, int patch) {
  if (patch <= 0) throw std::invalid_argument("split_patches: bad patch size");
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("split_patches: empty image");
  if (image.width % patch != 0 || image.height % patch != 0)
    throw std::invalid_argument("split_patches: image " +
                                std::to_string(image.width) + "x" +
                                std::to_string(image.height) +
                                " is not a multiple of patch " +
                                std::to_string(patch));
  std::size_t rows = image.height / patch;
  std::size_t cols = image.width / patch;
  std::size_t dim = static_cast<std::size_t>(patch) * patch * 3;
  std::vector<double> out(rows * cols * dim);
  std::size_t r = 0;
  for (std::size_t gy = 0; gy < rows; ++gy)
    for (std::size_t gx = 0; gx < cols; ++gx, ++r) {
      double* dst = out.data() + r * dim;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c)
            *dst++ = image.at(static_cast<int>(gy) * patch + py,
                              static_cast<int>(gx) * patch + px, c);
    }
  RawPatches rp;
  rp.values = Tensor::from_data({rows * cols, dim}, std::move(out));
  rp.rows = rows;
  rp.cols = cols;
  rp.patch = static_cast<std::size_t>(patch);
  return rp;
}

img::Image assemble_patches(const Tensor& values, std::size_t rows,
                            std::size_t cols, std::size_t patch) {
  std::size_t dim = patch * patch * 3;
  if (values.ndim() != 2 || values.dim(0) != rows * cols || values.dim(1) != dim)
    throw std::invalid_argument("assemble_patches: values shape " +
                                shape_str(values.shape()) +
                                " does not match grid");
  img::Image image;
  image.height = static_cast<int>(rows * patch);
  image.width = static_cast<int>(cols * patch);
  image.rgb.resize(rows * cols * dim);
  std::size_t r = 0;
  for (std::size_t gy = 0; gy < rows; ++gy)
    for (std::size_t gx = 0; gx < cols; ++gx, ++r) {
      const double* src = values.data().data() + r * dim;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c)
            image.at(static_cast<int>(gy * patch + py),
                     static_cast<int>(gx * patch + px), c) = *src++;
    }
  return image;
}

PatchSequence embed_patches(const RawPatches& raw, const Tensor& projection) {
  if (!raw.values.defined() || raw.values.dim(0) == 0)
    throw std::invalid_argument("embed_patches: no patches");
  if (projection.ndim() != 2 || projection.dim(0) != raw.values.dim(1))
    throw std::invalid_argument("embed_patches: projection shape " +
                                shape_str(projection.shape()) +
                                " does not match patch dim " +
                                std::to_string(raw.values.dim(1)));
  PatchSequence seq;
  seq.features = matmul(raw.values, projection);
  seq.rows = raw.rows;
  seq.cols = raw.cols;
  return seq;
}

}  // namespace m6::patches
