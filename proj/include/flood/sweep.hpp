#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flood/run_config.hpp"

namespace flood {

// One grid row: settings that override the base RunConfig. Absent fields keep
// the base value.
struct SweepRow {
  std::optional<double> dropout_rate;
  std::optional<Index> input_size;
  std::optional<double> weight_decay;
  std::optional<Index> batch_size;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  // Without an explicit seed a row trains under derive_seed(base seed, row index).
  std::optional<std::uint64_t> seed;
  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepGrid {
  std::string name;
  std::vector<SweepRow> rows;
};

// {"name": ..., "rows": [{"dropout_rate": 0.03, "input_size": 128, ...}]}
// Strict: unknown keys raise ConfigError.
SweepGrid parse_sweep_grid(const nlohmann::json& j);
SweepGrid load_sweep_grid(const std::filesystem::path& path);
nlohmann::ordered_json sweep_grid_to_json(const SweepGrid& grid);

// The nine published CCT tuning rows.
SweepGrid cct_tuning_grid();

struct SweepResult {
  int row = 0;
  double dropout_rate = 0, weight_decay = 0;
  Index input_size = 0, batch_size = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;  // set when !ok
  double accuracy = 0, macro_precision = 0;

  friend bool operator==(const SweepResult&, const SweepResult&) = default;
};

// The RunConfig a row trains under.
RunConfig sweep_row_config(const SweepGrid& grid, std::size_t row, const RunConfig& base);

using SweepCallback = std::function<void(const SweepResult&)>;

// Trains each row in order on the manifest's train split and scores it on the
// test split. A row that throws is recorded as failed and the sweep moves on.
std::vector<SweepResult> run_sweep(const SweepGrid& grid, const RunConfig& base, const DatasetManifest& manifest,
                                   const SweepCallback& on_row = {});

// Table layout: Dropout Rate, Input Size, Weight Decay, Batch Size, Accuracy(%), Precision(%).
std::string sweep_csv(const std::vector<SweepResult>& results);
std::string sweep_markdown(const std::vector<SweepResult>& results);

}  // namespace flood
