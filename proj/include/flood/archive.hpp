#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "flood/architectures.hpp"

// Weight archive: "AFCT" | u32 version | u64 header length | JSON header |
// payload of little-endian f32 values in header order. Integers are
// little-endian. The header carries the model config, each parameter's name,
// shape, byte offset, byte length and trainable flag, the payload size and its
// CRC-32, plus a free-form metadata object (class names, preprocessing).
namespace flood {

inline constexpr std::uint32_t kArchiveVersion = 1;

std::vector<std::uint8_t> serialize_model(const Classifier<float>& model,
                                          const nlohmann::json& metadata = nlohmann::json::object());

// Throws CorruptArchive (bad magic, checksum, truncation, parameter set
// mismatch), UnsupportedVersion (newer format) or ConfigError (wrong kind).
Classifier<float> deserialize_model(std::span<const std::uint8_t> bytes,
                                    std::optional<ModelKind> expected_kind = std::nullopt,
                                    nlohmann::json* metadata = nullptr);

void save_model(const Classifier<float>& model, const std::filesystem::path& path,
                const nlohmann::json& metadata = nlohmann::json::object());
Classifier<float> load_model(const std::filesystem::path& path, std::optional<ModelKind> expected_kind = std::nullopt,
                             nlohmann::json* metadata = nullptr);

}  // namespace flood
