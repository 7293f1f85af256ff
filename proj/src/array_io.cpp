#include "neurocam/array_io.hpp"

#include <fstream>
#include <stdexcept>

namespace neurocam {

namespace {
constexpr char kMagic[4] = {'N', 'C', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("array container: truncated file");
  return v;
}
}  // namespace

void save_array(const std::string& path, const std::vector<std::size_t>& shape,
                const std::vector<double>& data) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != data.size()) throw std::invalid_argument("save_array: size does not match shape");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_array: cannot open " + path);
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!os) throw std::runtime_error("save_array: write failed for " + path);
}

LoadedArray load_array(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_array: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("load_array: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("load_array: unsupported version");
  const auto ndim = read_pod<std::uint32_t>(is);
  LoadedArray out;
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = read_pod<std::uint64_t>(is);
    out.shape.push_back(static_cast<std::size_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  out.data.resize(n);
  is.read(reinterpret_cast<char*>(out.data.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("load_array: truncated payload in " + path);
  return out;
}

}  // namespace neurocam
