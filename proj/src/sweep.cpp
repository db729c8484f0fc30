#include "flood/sweep.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "flood/random.hpp"

namespace flood {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename V>
void read_opt(const json& j, const char* key, std::optional<V>& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sweep row key '") + key + "': " + e.what());
  }
}

SweepRow row(double dropout, Index size, double wd, Index batch) {
  SweepRow r;
  r.dropout_rate = dropout;
  r.input_size = size;
  r.weight_decay = wd;
  r.batch_size = batch;
  return r;
}

// Shortest decimal that reads back to the same double: 0.03 stays "0.03".
std::string fmt_value(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

std::string fmt_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

struct Cells {
  std::string dropout, size, wd, batch, acc, prec;
};

Cells cells(const SweepResult& r) {
  const std::string s = std::to_string(r.input_size);
  return {fmt_value(r.dropout_rate), s + "x" + s + "x3", fmt_value(r.weight_decay), std::to_string(r.batch_size),
          r.ok ? fmt_percent(r.accuracy) : "failed", r.ok ? fmt_percent(r.macro_precision) : "failed"};
}

}  // namespace

SweepGrid parse_sweep_grid(const json& j) {
  if (!j.is_object()) throw ConfigError("sweep grid must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "name" && it.key() != "rows") throw ConfigError("unknown key '" + it.key() + "' in sweep grid");
  }
  SweepGrid g;
  g.name = j.value("name", std::string{});
  if (!j.contains("rows") || !j["rows"].is_array()) throw ConfigError("sweep grid needs a 'rows' array");
  static const std::set<std::string> allowed = {"dropout_rate", "input_size",    "weight_decay", "batch_size",
                                                "epochs",       "learning_rate", "seed"};
  for (const auto& r : j["rows"]) {
    if (!r.is_object()) throw ConfigError("sweep rows must be objects");
    for (auto it = r.begin(); it != r.end(); ++it) {
      if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in sweep row");
    }
    SweepRow row;
    read_opt(r, "dropout_rate", row.dropout_rate);
    read_opt(r, "input_size", row.input_size);
    read_opt(r, "weight_decay", row.weight_decay);
    read_opt(r, "batch_size", row.batch_size);
    read_opt(r, "epochs", row.epochs);
    read_opt(r, "learning_rate", row.learning_rate);
    read_opt(r, "seed", row.seed);
    g.rows.push_back(row);
  }
  if (g.rows.empty()) throw ConfigError("sweep grid has no rows");
  return g;
}

SweepGrid load_sweep_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sweep grid " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("sweep grid " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_sweep_grid(j);
}

ordered_json sweep_grid_to_json(const SweepGrid& grid) {
  ordered_json j;
  j["name"] = grid.name;
  j["rows"] = ordered_json::array();
  for (const auto& r : grid.rows) {
    ordered_json o = ordered_json::object();
    if (r.dropout_rate) o["dropout_rate"] = *r.dropout_rate;
    if (r.input_size) o["input_size"] = *r.input_size;
    if (r.weight_decay) o["weight_decay"] = *r.weight_decay;
    if (r.batch_size) o["batch_size"] = *r.batch_size;
    if (r.epochs) o["epochs"] = *r.epochs;
    if (r.learning_rate) o["learning_rate"] = *r.learning_rate;
    if (r.seed) o["seed"] = *r.seed;
    j["rows"].push_back(std::move(o));
  }
  return j;
}

SweepGrid cct_tuning_grid() {
  return {"cct-tuning",
          {row(0.03, 32, 0.001, 128), row(0.03, 72, 0.001, 128), row(0.03, 128, 0.001, 128),
           row(0.03, 256, 0.001, 128), row(0.03, 128, 0.001, 128), row(0.01, 128, 0.001, 64),
           row(0.01, 128, 0.001, 32), row(0.01, 128, 0.001, 16), row(0.01, 128, 0.001, 32)}};
}

RunConfig sweep_row_config(const SweepGrid& grid, std::size_t index, const RunConfig& base) {
  const SweepRow& r = grid.rows.at(index);
  RunConfig c = base;
  if (r.dropout_rate) c.train.dropout_rate = *r.dropout_rate;
  if (r.input_size) c.pipeline.input_size = *r.input_size;
  if (r.weight_decay) c.train.weight_decay = *r.weight_decay;
  if (r.batch_size) c.train.batch_size = *r.batch_size;
  if (r.epochs) c.train.epochs = *r.epochs;
  if (r.learning_rate) c.train.learning_rate = *r.learning_rate;
  c.train.seed = r.seed ? *r.seed : derive_seed(base.train.seed, {static_cast<std::uint64_t>(index)});
  c.pipeline.augmentation.seed = c.train.seed;
  return c;
}

std::vector<SweepResult> run_sweep(const SweepGrid& grid, const RunConfig& base, const DatasetManifest& manifest,
                                   const SweepCallback& on_row) {
  if (grid.rows.empty()) throw InvalidArgument("sweep grid is empty");
  std::vector<SweepResult> out;
  for (std::size_t i = 0; i < grid.rows.size(); ++i) {
    const RunConfig c = sweep_row_config(grid, i, base);
    SweepResult r;
    r.row = static_cast<int>(i);
    r.dropout_rate = c.train.dropout_rate;
    r.weight_decay = c.train.weight_decay;
    r.input_size = c.pipeline.input_size;
    r.batch_size = c.train.batch_size;
    r.seed = c.train.seed;
    try {
      Classifier<float> model(c.model_config());
      BatchLoader loader(manifest, c.pipeline);
      train(model, loader, c.train);
      const auto ev = evaluate(model, loader, Split::test, c.train.batch_size);
      const auto m = compute_metrics(ev.confusion);
      r.accuracy = m.accuracy;
      r.macro_precision = m.macro_precision;
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    out.push_back(r);
    if (on_row) on_row(r);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  os << "Dropout Rate,Input Size,Weight Decay,Batch Size,Accuracy(%),Precision(%)\n";
  for (const auto& r : results) {
    const auto c = cells(r);
    os << c.dropout << ',' << c.size << ',' << c.wd << ',' << c.batch << ',' << c.acc << ',' << c.prec << '\n';
  }
  return os.str();
}

std::string sweep_markdown(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  os << "| Dropout Rate | Input Size | Weight Decay | Batch Size | Accuracy(%) | Precision(%) |\n"
     << "|---|---|---|---|---|---|\n";
  for (const auto& r : results) {
    const auto c = cells(r);
    os << "| " << c.dropout << " | " << c.size << " | " << c.wd << " | " << c.batch << " | " << c.acc << " | "
       << c.prec << " |\n";
  }
  for (const auto& r : results) {
    if (!r.ok) os << "\nrow " << r.row << " failed: " << r.error << '\n';
  }
  return os.str();
}

}  // namespace flood
