#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "flood/tensor.hpp"

namespace flood {

enum class ModelKind { cct, vit, swin, eanet };

std::string kind_name(ModelKind kind);
ModelKind parse_kind(const std::string& name);  // throws InvalidArgument

struct TokenizerBlockSpec {
  Index out_channels = 64;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int pool_kernel = 3;  // 0 = no pooling
  int pool_stride = 2;
  int pool_padding = 1;

  friend bool operator==(const TokenizerBlockSpec&, const TokenizerBlockSpec&) = default;
};

// Architecture plus the training hyperparameters that travel with a preset.
// Fields unused by a kind are ignored.
struct ModelConfig {
  ModelKind kind = ModelKind::cct;
  Index height = 128, width = 128, channels = 3;
  Index num_classes = 4;

  Index dim = 128;
  Index depth = 2;
  Index heads = 2;
  double mlp_ratio = 1.0;

  double dropout_rate = 0.1;
  double weight_decay = 0.05;
  Index batch_size = 32;

  Index patch_size = 16;                       // vit, swin, eanet
  std::vector<TokenizerBlockSpec> tokenizer;   // cct

  // swin, one entry per stage
  std::vector<Index> stage_dims;
  std::vector<Index> stage_depths;
  std::vector<Index> stage_heads;
  std::vector<Index> window_sizes;
  std::vector<Index> shift_sizes;  // applied on odd blocks of each stage

  Index memory_units = 64;  // eanet

  bool positional_embedding = true;
  bool freeze_positional = false;
  std::uint64_t seed = 0;

  // Hidden width of the MLP for a block of width d.
  Index mlp_hidden(Index d) const;
  // Token grid after tokenization / patch embedding (height, width).
  std::pair<Index, Index> token_grid() const;

  // Throws InvalidArgument / InvalidShape for inconsistent settings.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named presets: cct, vit, swin, eanet, with or without the "-afssa" suffix.
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Same config at a square input of `size` pixels; token grids and positional
// tables follow from the geometry. Validated before returning.
ModelConfig with_input_size(ModelConfig config, Index size);

nlohmann::ordered_json config_to_json(const ModelConfig& config);
// Strict: unknown keys raise ConfigError naming the key. Missing keys fall
// back to the preset for the given kind.
ModelConfig config_from_json(const nlohmann::json& j);

struct ParameterCount {
  Index total = 0;
  Index trainable = 0;
  Index non_trainable() const { return total - trainable; }
};

// Closed-form count derived layer by layer from the config alone.
ParameterCount analytic_parameter_count(const ModelConfig& config);

}  // namespace flood
