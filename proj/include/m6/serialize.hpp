#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "m6/tensor.hpp"

namespace m6 {

/// Named-tensor container, one file per parameter set.
///
/// Layout: 8-byte magic "M6TENSOR", u32 format version, u64 header
/// length, a JSON header mapping each name to {"shape": [...],
/// "offset": bytes into the payload}, then all values as little-endian
/// f64. Names are written sorted, so identical tensors always produce
/// identical bytes.
void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);

std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace m6
