#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "flood/dataset.hpp"
#include "flood/model_config.hpp"
#include "flood/training.hpp"

namespace flood {

// Everything one `train` run needs. Parsed strictly: an unknown key raises
// ConfigError naming it. Absent keys take the preset's defaults.
struct RunConfig {
  std::string preset = "cct-afssa";
  std::filesystem::path dataset_root;  // scanned and split when no manifest is given
  std::filesystem::path manifest;
  std::filesystem::path output_dir = "run";
  TrainConfig train;
  PipelineOptions pipeline;
  nlohmann::json model = nlohmann::json::object();  // ModelConfig overrides

  // Preset + overrides, resized to the pipeline input size, with dropout,
  // weight decay, batch size and seed taken from the train settings.
  ModelConfig model_config() const;
};

RunConfig default_run_config(const std::string& preset);

// Relative paths resolve against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::ordered_json run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace flood
