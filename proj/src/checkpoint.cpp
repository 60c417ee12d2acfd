#include "mtsparse/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace mtsparse {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'S', 'P', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void write_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) throw DataError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<const MaskedParam* const> params) {
  nlohmann::json index;
  index["format"] = "mtsparse-checkpoint";
  index["version"] = kCheckpointVersion;
  index["endianness"] = "little";
  auto arrays = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const MaskedParam* p : params) {
    const auto count = static_cast<std::uint64_t>(p->numel());
    arrays.push_back({{"name", p->name},
                      {"shape", p->value.shape()},
                      {"count", count},
                      {"values_offset", offset},
                      {"mask_offset", offset + 8 * count}});
    offset += 16 * count;
  }
  index["arrays"] = std::move(arrays);
  const std::string text = index.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const MaskedParam* p : params) {
    for (Index i = 0; i < p->numel(); ++i) write_le<double>(os, p->value.data()(i));
    for (Index i = 0; i < p->numel(); ++i) write_le<double>(os, p->mask.data()(i));
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw DataError("not a checkpoint: " + path.string());
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = read_le<std::uint64_t>(is);
  std::string text(length, '\0');
  is.read(text.data(), static_cast<std::streamsize>(length));
  if (!is) throw DataError("checkpoint index truncated");
  const auto index = nlohmann::json::parse(text);
  const auto payload_start = is.tellg();

  std::vector<CheckpointEntry> out;
  for (const auto& a : index.at("arrays")) {
    CheckpointEntry e;
    e.name = a.at("name").get<std::string>();
    e.shape = a.at("shape").get<Shape>();
    const auto count = a.at("count").get<std::uint64_t>();
    if (static_cast<std::uint64_t>(shape_size(e.shape)) != count) throw DataError("checkpoint shape/count mismatch for " + e.name);
    e.values.resize(static_cast<Index>(count));
    e.mask.resize(static_cast<Index>(count));
    is.seekg(payload_start + static_cast<std::streamoff>(a.at("values_offset").get<std::uint64_t>()));
    for (Index i = 0; i < e.values.size(); ++i) e.values(i) = read_le<double>(is);
    is.seekg(payload_start + static_cast<std::streamoff>(a.at("mask_offset").get<std::uint64_t>()));
    for (Index i = 0; i < e.mask.size(); ++i) e.mask(i) = read_le<double>(is);
    out.push_back(std::move(e));
  }
  return out;
}

void load_checkpoint(const std::filesystem::path& path, std::span<MaskedParam* const> params) {
  std::map<std::string, CheckpointEntry> by_name;
  for (auto& e : read_checkpoint(path)) by_name.emplace(e.name, std::move(e));
  for (MaskedParam* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw DataError("checkpoint lacks parameter " + p->name);
    if (it->second.shape != p->value.shape()) {
      throw DataError("checkpoint shape " + shape_string(it->second.shape) + " differs for " + p->name);
    }
    p->value.data() = it->second.values;
    p->mask.data() = it->second.mask;
  }
}

}  // namespace mtsparse
