#pragma once

// Named-tensor store for model checkpoints. Binary layout: magic "NCPS",
// u32 version, u64 entry count; per entry u32 name length, name bytes,
// u32 ndim, u64 dims[ndim], little-endian f64 payload. A JSON manifest
// (<path>.json) lists entries with shapes and byte offsets so other
// implementations can reload the file.

#include <map>
#include <string>

#include "neurocam/tensor.hpp"

namespace neurocam {

void save_params(const std::string& path, const std::map<std::string, Tensor>& params);
std::map<std::string, Tensor> load_params(const std::string& path);

}  // namespace neurocam
