#pragma once

// Minimal binary array container: magic "NCAR", u32 version, u32 ndim,
// u64 dims[ndim], then row-major little-endian f64 payload.

#include <cstdint>
#include <string>
#include <vector>

namespace neurocam {

void save_array(const std::string& path, const std::vector<std::size_t>& shape,
                const std::vector<double>& data);

struct LoadedArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};
LoadedArray load_array(const std::string& path);

}  // namespace neurocam
