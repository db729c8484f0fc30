#include "flood/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "flood/image.hpp"

namespace flood {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'A', 'F', 'C', 'T'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Classifier<float>& model, const json& metadata) {
  std::vector<std::uint8_t> payload;
  ordered_json params = ordered_json::array();
  for (const auto& p : model.parameters().items()) {
    const std::size_t offset = payload.size();
    for (float v : p.value.data()) put_le(payload, std::bit_cast<std::uint32_t>(v), 4);
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"offset", offset},
                      {"length", payload.size() - offset},
                      {"trainable", p.trainable}});
  }
  ordered_json header;
  header["config"] = config_to_json(model.config());
  header["parameters"] = std::move(params);
  header["payload_bytes"] = payload.size();
  header["checksum"] = crc_of(payload);
  header["metadata"] = metadata.is_null() ? ordered_json::object() : ordered_json::parse(metadata.dump());
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kArchiveVersion, 4);
  put_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Classifier<float> deserialize_model(std::span<const std::uint8_t> bytes, std::optional<ModelKind> expected_kind,
                                    json* metadata) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptArchive("not a weight archive");
  const auto version = static_cast<std::uint32_t>(get_le(bytes.data() + 4, 4));
  if (version > kArchiveVersion) {
    throw UnsupportedVersion("archive format version " + std::to_string(version) + " is newer than supported " +
                             std::to_string(kArchiveVersion));
  }
  if (version == 0) throw CorruptArchive("archive version 0 is invalid");
  const std::uint64_t header_len = get_le(bytes.data() + 8, 8);
  if (header_len > bytes.size() - 16) throw CorruptArchive("archive header runs past end of file");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw CorruptArchive(std::string("archive header is not valid JSON: ") + e.what());
  }
  const auto payload = bytes.subspan(16 + header_len);
  ModelConfig config;
  std::uint64_t payload_bytes = 0;
  std::uint32_t checksum = 0;
  try {
    payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    checksum = header.at("checksum").get<std::uint32_t>();
    config = config_from_json(header.at("config"));
  } catch (const json::exception& e) {
    throw CorruptArchive(std::string("archive header incomplete: ") + e.what());
  }
  if (payload.size() != payload_bytes) {
    throw CorruptArchive("archive payload is " + std::to_string(payload.size()) + " bytes, header says " +
                         std::to_string(payload_bytes));
  }
  if (crc_of(payload) != checksum) throw CorruptArchive("archive payload checksum mismatch");
  if (expected_kind && *expected_kind != config.kind) {
    throw ConfigError("archive holds a " + kind_name(config.kind) + " model but " + kind_name(*expected_kind) +
                      " was expected");
  }

  Classifier<float> model(config);
  auto& items = model.parameters().items();
  const auto& entries = header.at("parameters");
  if (!entries.is_array() || entries.size() != items.size()) {
    throw CorruptArchive("archive lists " + std::to_string(entries.size()) + " parameters, model has " +
                         std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& e = entries[i];
    auto& p = items[i];
    try {
      if (e.at("name").get<std::string>() != p.name) {
        throw CorruptArchive("archive parameter " + std::to_string(i) + " is '" + e.at("name").get<std::string>() +
                             "', expected '" + p.name + "'");
      }
      if (e.at("shape").get<Shape>() != p.value.shape()) throw CorruptArchive("shape mismatch for " + p.name);
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto length = e.at("length").get<std::uint64_t>();
      if (length != static_cast<std::uint64_t>(p.value.numel()) * 4 || offset > payload.size() ||
          length > payload.size() - offset) {
        throw CorruptArchive("bad extent for " + p.name);
      }
      auto dst = p.value.data();
      for (std::size_t j = 0; j < dst.size(); ++j) {
        dst[j] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(payload.data() + offset + 4 * j, 4)));
      }
      const bool trainable = e.value("trainable", true);
      p.trainable = trainable;
      p.value.set_requires_grad(trainable);
    } catch (const json::exception& ex) {
      throw CorruptArchive(std::string("archive parameter entry malformed: ") + ex.what());
    }
  }
  if (metadata) *metadata = header.value("metadata", json::object());
  return model;
}

void save_model(const Classifier<float>& model, const std::filesystem::path& path, const json& metadata) {
  write_file(path, serialize_model(model, metadata));
}

Classifier<float> load_model(const std::filesystem::path& path, std::optional<ModelKind> expected_kind,
                             json* metadata) {
  return deserialize_model(read_file(path), expected_kind, metadata);
}

}  // namespace flood
