#include "flood/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace flood {

using nlohmann::ordered_json;

ordered_json metrics_to_json(const MetricsReport& m, const std::vector<std::string>& names, std::int64_t samples) {
  if (names.size() != m.per_class.size()) throw InvalidArgument("class name count does not match the report");
  ordered_json j;
  j["accuracy"] = m.accuracy;
  j["macro_precision"] = m.macro_precision;
  j["macro_recall"] = m.macro_recall;
  j["macro_f1"] = m.macro_f1;
  j["mcc"] = m.mcc;
  j["per_class"] = ordered_json::array();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto& c = m.per_class[k];
    j["per_class"].push_back(ordered_json{{"class", names[k]},
                                          {"precision", c.precision},
                                          {"recall", c.recall},
                                          {"f1", c.f1},
                                          {"support", c.support}});
  }
  j["zero_division_count"] = m.zero_divisions;
  j["samples"] = samples;
  return j;
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != cm.classes()) throw InvalidArgument("class name count does not match matrix");
  std::ostringstream os;
  os << "true/predicted";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (int t = 0; t < cm.classes(); ++t) {
    os << names[static_cast<std::size_t>(t)];
    for (int p = 0; p < cm.classes(); ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void emit_report(const MetricsReport& metrics, const ConfusionMatrix& cm, const std::vector<std::string>& names,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "metrics.json", metrics_to_json(metrics, names, cm.total()).dump(2) + "\n");
  write_text(dir / "confusion.csv", confusion_csv(cm, names));
}

ordered_json epoch_log_to_json(const TrainResult& r) {
  ordered_json j;
  j["best_epoch"] = r.best_epoch;
  j["best_val_accuracy"] = r.best_val_accuracy;
  j["epochs"] = ordered_json::array();
  for (const auto& e : r.log) {
    j["epochs"].push_back(ordered_json{{"epoch", e.epoch},
                                       {"train_loss", e.train_loss},
                                       {"val_loss", e.val_loss},
                                       {"train_accuracy", e.train_accuracy},
                                       {"val_accuracy", e.val_accuracy},
                                       {"seconds", e.seconds}});
  }
  return j;
}

std::string bench_report_text(const BenchReport& r, ModelKind kind) {
  const double gflops = static_cast<double>(r.flops.total) / 1e9;
  char buf[512];
  std::ostringstream os;
  os << "model: " << kind_name(kind) << "\n";
  std::snprintf(buf, sizeof buf, "batch: %lld  repetitions: %d  threads: %d\n", static_cast<long long>(r.batch_size),
                r.repetitions, r.threads);
  os << buf;
  std::snprintf(buf, sizeof buf, "inference: mean %.6f s/batch  stddev %.6f s\n", r.mean_seconds, r.stddev_seconds);
  os << buf;
  std::snprintf(buf, sizeof buf, "flops: %.3f G per image (%s)\n", gflops, r.flops.convention.c_str());
  os << buf;
  std::snprintf(buf, sizeof buf, "reference: %.3f G flops, %.3f s inference | measured/reference: flops %.3fx, time %.3fx\n",
                r.reference.gflops, r.reference.inference_seconds, gflops / r.reference.gflops,
                r.mean_seconds / r.reference.inference_seconds);
  os << buf;
  return os.str();
}

ordered_json bench_report_json(const BenchReport& r, ModelKind kind) {
  ordered_json j;
  j["model"] = kind_name(kind);
  j["batch_size"] = r.batch_size;
  j["repetitions"] = r.repetitions;
  j["threads"] = r.threads;
  j["samples_seconds"] = r.samples;
  j["mean_seconds"] = r.mean_seconds;
  j["stddev_seconds"] = r.stddev_seconds;
  j["flops"] = r.flops.total;
  j["flop_convention"] = r.flops.convention;
  j["reference"] = {{"gflops", r.reference.gflops},
                    {"train_seconds", r.reference.train_seconds},
                    {"inference_seconds", r.reference.inference_seconds}};
  j["flops_ratio_vs_reference"] = static_cast<double>(r.flops.total) / 1e9 / r.reference.gflops;
  return j;
}

}  // namespace flood
