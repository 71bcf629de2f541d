#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "evodhm/tensor.hpp"

namespace evodhm {

// Single-file chunked binary container: magic "EVAM", u16 version,
// u32 chunk count, then named little-endian f64 tensors with shape headers.
// A JSON text twin exists for debugging (see to_json_text / from_json_text).
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr std::uint16_t kChunkFormatVersion = 1;

void write_chunks(const std::filesystem::path& path, const std::vector<NamedTensor>& chunks);
std::vector<NamedTensor> read_chunks(const std::filesystem::path& path);

std::string to_json_text(const std::vector<NamedTensor>& chunks);
std::vector<NamedTensor> from_json_text(const std::string& text);

const Tensor& find_chunk(const std::vector<NamedTensor>& chunks, const std::string& name);

}  // namespace evodhm
