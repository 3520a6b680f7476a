#include "m6/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace m6 {

namespace {

constexpr char kMagic[8] = {'M', '6', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error("tensor container: truncated file");
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
  // std::map keeps header entries and payload in sorted name order.
  std::map<std::string, Tensor> sorted;
  for (const auto& [name, t] : tensors) {
    if (!t.defined())
      throw std::invalid_argument("save_tensors: empty tensor '" + name + "'");
    if (!sorted.emplace(name, t).second)
      throw std::invalid_argument("save_tensors: duplicate name '" + name + "'");
  }
  nlohmann::json header;
  header["tensors"] = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : sorted) {
    header["tensors"][name] = {{"shape", t.shape()}, {"offset", offset}};
    offset += t.size() * sizeof(double);
  }
  std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kFormatVersion);
  write_pod(os, static_cast<std::uint64_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : sorted) {
    auto d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("short write to " + path.string());
}

std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + ": not a tensor container");
  auto version = read_pod<std::uint32_t>(is);
  if (version != kFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported container version " +
                             std::to_string(version));
  auto header_len = read_pod<std::uint64_t>(is);
  std::string hs(header_len, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw std::runtime_error(path.string() + ": truncated header");
  nlohmann::json header = nlohmann::json::parse(hs);

  std::streampos payload_start = is.tellg();
  std::map<std::string, Tensor> out;
  for (const auto& [name, meta] : header.at("tensors").items()) {
    Shape shape = meta.at("shape").get<Shape>();
    auto offset = meta.at("offset").get<std::uint64_t>();
    std::size_t count = numel(shape);
    std::vector<double> data(count);
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error(path.string() + ": truncated payload");
    out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace m6
