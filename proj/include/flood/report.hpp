#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "flood/metrics.hpp"
#include "flood/training.hpp"

namespace flood {

// Headline fields first (accuracy, macro precision/recall/F1, mcc), then the
// per-class breakdown keyed by class name in manifest order.
nlohmann::ordered_json metrics_to_json(const MetricsReport& metrics, const std::vector<std::string>& class_names,
                                       std::int64_t samples);

// Header "true/predicted,<names>", one row per true class.
std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

// Writes <dir>/metrics.json and <dir>/confusion.csv, creating dir. Output is
// byte-for-byte determined by the inputs.
void emit_report(const MetricsReport& metrics, const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                 const std::filesystem::path& dir);

nlohmann::ordered_json epoch_log_to_json(const TrainResult& result);

// Timing summary plus a comparison line against the published figures.
std::string bench_report_text(const BenchReport& report, ModelKind kind);
nlohmann::ordered_json bench_report_json(const BenchReport& report, ModelKind kind);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace flood
