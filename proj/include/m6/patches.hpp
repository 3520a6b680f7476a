#pragma once

#include "m6/image.hpp"
#include "m6/tensor.hpp"

namespace m6::patches {

/// Flattened non-overlapping patches in row-major grid order. Each row
/// holds one patch, pixels row-major within the patch, channels
/// innermost, so patch (0,1) of an 8-pixel grid covers columns 8..15 of
/// rows 0..7.
struct RawPatches {
  Tensor values;  // [rows*cols, patch*patch*3], constant
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch = 0;
};

RawPatches split_patches(const img::Image& image, int patch = 8);

/// Inverse of split_patches for square grids of square patches.
img::Image assemble_patches(const Tensor& values, std::size_t rows,
                            std::size_t cols, std::size_t patch);

/// Visual token features: raw patches projected by a learned matrix
/// W[patch*patch*3, d_model].
struct PatchSequence {
  Tensor features;  // [rows*cols, d_model]
  std::size_t rows = 0;
  std::size_t cols = 0;
};

PatchSequence embed_patches(const RawPatches& raw, const Tensor& projection);

}  // namespace m6::patches
