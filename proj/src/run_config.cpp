#include "flood/run_config.hpp"

#include <fstream>
#include <set>

namespace flood {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

RunConfig default_run_config(const std::string& preset_name) {
  RunConfig r;
  const ModelConfig m = preset(preset_name);
  r.preset = kind_name(m.kind) + "-afssa";
  r.train = train_preset(preset_name);
  r.pipeline.input_size = m.height;
  return r;
}

ModelConfig RunConfig::model_config() const {
  const ModelConfig base = flood::preset(preset);
  if (model.contains("kind") &&
      (!model["kind"].is_string() || model["kind"].get<std::string>() != kind_name(base.kind))) {
    throw ConfigError("model override 'kind' contradicts preset '" + preset + "'");
  }
  // Unknown override keys pass through here and are rejected by config_from_json.
  json merged = json::parse(config_to_json(base).dump());
  for (auto it = model.begin(); it != model.end(); ++it) merged[it.key()] = it.value();
  merged["height"] = merged["width"] = pipeline.input_size;
  merged["dropout_rate"] = train.dropout_rate;
  merged["weight_decay"] = train.weight_decay;
  merged["batch_size"] = train.batch_size;
  merged["seed"] = train.seed;
  return config_from_json(merged);
}

namespace {

template <typename V>
void read(const json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config key '") + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> allowed = {
      "preset",       "dataset_root", "manifest", "output_dir",  "epochs",      "learning_rate",
      "batch_size",   "weight_decay", "dropout_rate", "seed",    "input_size",  "clahe",
      "augmentation", "augmentation_copies", "clahe_tiles", "clahe_clip_limit", "model"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in run config");
  }
  std::string preset_name = "cct-afssa";
  read(j, "preset", preset_name);
  RunConfig r;
  try {
    r = default_run_config(preset_name);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  std::string s;
  if (j.contains("dataset_root")) {
    read(j, "dataset_root", s);
    r.dataset_root = resolve(s, base_dir);
  }
  if (j.contains("manifest")) {
    read(j, "manifest", s);
    r.manifest = resolve(s, base_dir);
  }
  if (j.contains("output_dir")) {
    read(j, "output_dir", s);
    r.output_dir = resolve(s, base_dir);
  }
  read(j, "epochs", r.train.epochs);
  read(j, "learning_rate", r.train.learning_rate);
  read(j, "batch_size", r.train.batch_size);
  read(j, "weight_decay", r.train.weight_decay);
  read(j, "dropout_rate", r.train.dropout_rate);
  read(j, "seed", r.train.seed);
  read(j, "input_size", r.pipeline.input_size);
  read(j, "clahe", r.pipeline.clahe);
  read(j, "augmentation", r.pipeline.augment);
  read(j, "augmentation_copies", r.pipeline.augmentation.copies_per_image);
  if (j.contains("clahe_tiles")) {
    int tiles = 8;
    read(j, "clahe_tiles", tiles);
    r.pipeline.clahe_params.tiles_x = r.pipeline.clahe_params.tiles_y = tiles;
  }
  read(j, "clahe_clip_limit", r.pipeline.clahe_params.clip_limit);
  if (j.contains("model")) {
    if (!j["model"].is_object()) throw ConfigError("run config key 'model' must be an object");
    r.model = j["model"];
  }
  r.pipeline.augmentation.seed = r.train.seed;
  try {
    r.train.validate();
    r.pipeline.augmentation.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (r.pipeline.clahe_params.tiles_x < 1 || !(r.pipeline.clahe_params.clip_limit >= 1.0)) {
    throw ConfigError("run config: clahe_tiles must be >= 1 and clahe_clip_limit >= 1");
  }
  r.model_config();  // surface override errors early
  return r;
}

ordered_json run_config_to_json(const RunConfig& r) {
  ordered_json j;
  j["preset"] = r.preset;
  if (!r.dataset_root.empty()) j["dataset_root"] = r.dataset_root.string();
  if (!r.manifest.empty()) j["manifest"] = r.manifest.string();
  j["output_dir"] = r.output_dir.string();
  j["epochs"] = r.train.epochs;
  j["learning_rate"] = r.train.learning_rate;
  j["batch_size"] = r.train.batch_size;
  j["weight_decay"] = r.train.weight_decay;
  j["dropout_rate"] = r.train.dropout_rate;
  j["seed"] = r.train.seed;
  j["input_size"] = r.pipeline.input_size;
  j["clahe"] = r.pipeline.clahe;
  j["augmentation"] = r.pipeline.augment;
  j["augmentation_copies"] = r.pipeline.augmentation.copies_per_image;
  j["clahe_tiles"] = r.pipeline.clahe_params.tiles_x;
  j["clahe_clip_limit"] = r.pipeline.clahe_params.clip_limit;
  j["model"] = ordered_json::parse(r.model.dump());
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("run config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

}  // namespace flood
