#include "evodhm/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "chunk format is little-endian; big-endian hosts unsupported");

namespace evodhm {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'A', 'M'};

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated chunk file");
  return v;
}

}  // namespace

void write_chunks(const std::filesystem::path& path, const std::vector<NamedTensor>& chunks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  put<std::uint16_t>(os, kChunkFormatVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(chunks.size()));
  for (const auto& [name, t] : chunks) {
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<NamedTensor> read_chunks(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic in " + path.string());
  auto version = get<std::uint16_t>(is);
  if (version != kChunkFormatVersion)
    throw std::runtime_error("unsupported chunk format version " + std::to_string(version));
  auto n = get<std::uint32_t>(is);
  std::vector<NamedTensor> chunks;
  chunks.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name_len = get<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    auto rank = get<std::uint8_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated chunk payload in " + path.string());
    chunks.push_back({std::move(name), std::move(t)});
  }
  return chunks;
}

std::string to_json_text(const std::vector<NamedTensor>& chunks) {
  nlohmann::json j;
  j["magic"] = "EVAM";
  j["version"] = kChunkFormatVersion;
  j["chunks"] = nlohmann::json::array();
  for (const auto& [name, t] : chunks) {
    j["chunks"].push_back({{"name", name}, {"shape", t.shape}, {"data", t.data}});
  }
  return j.dump(2);
}

std::vector<NamedTensor> from_json_text(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  if (j.value("magic", "") != "EVAM") throw std::runtime_error("bad json chunk magic");
  std::vector<NamedTensor> chunks;
  for (const auto& c : j.at("chunks")) {
    NamedTensor nt;
    nt.name = c.at("name").get<std::string>();
    nt.tensor = Tensor(c.at("shape").get<std::vector<std::size_t>>(),
                       c.at("data").get<std::vector<double>>());
    chunks.push_back(std::move(nt));
  }
  return chunks;
}

const Tensor& find_chunk(const std::vector<NamedTensor>& chunks, const std::string& name) {
  for (const auto& c : chunks)
    if (c.name == name) return c.tensor;
  throw std::runtime_error("missing chunk: " + name);
}

}  // namespace evodhm
