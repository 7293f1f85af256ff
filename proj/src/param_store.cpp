#include "neurocam/param_store.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace neurocam {

namespace {
constexpr char kMagic[4] = {'N', 'C', 'P', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("param store: truncated file");
  return v;
}
}  // namespace

void save_params(const std::string& path, const std::map<std::string, Tensor>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_params: cannot open " + path);
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint64_t>(os, params.size());

  nlohmann::json manifest;
  manifest["format"] = "neurocam-param-store";
  manifest["version"] = kVersion;
  manifest["entries"] = nlohmann::json::array();

  for (const auto& [name, tensor] : params) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    entry["offset"] = static_cast<std::uint64_t>(os.tellp());
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.ndim()));
    for (std::size_t d : tensor.shape()) write_pod<std::uint64_t>(os, d);
    const auto& v = tensor.values();
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
    entry["bytes"] = v.size() * sizeof(double);
    manifest["entries"].push_back(entry);
  }
  if (!os) throw std::runtime_error("save_params: write failed for " + path);
  os.close();

  std::ofstream ms(path + ".json");
  if (!ms) throw std::runtime_error("save_params: cannot open manifest for " + path);
  ms << manifest.dump(2) << "\n";
}

std::map<std::string, Tensor> load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_params: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("load_params: bad magic in " + path);
  if (read_pod<std::uint32_t>(is) != kVersion)
    throw std::runtime_error("load_params: unsupported version");
  const auto count = read_pod<std::uint64_t>(is);
  std::map<std::string, Tensor> out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = read_pod<std::uint32_t>(is);
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const auto d = read_pod<std::uint64_t>(is);
      shape.push_back(static_cast<std::size_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    std::vector<double> values(n);
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("load_params: truncated payload in " + path);
    out.emplace(name, Tensor::from_values(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace neurocam
