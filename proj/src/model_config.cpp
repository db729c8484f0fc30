#include "flood/model_config.hpp"

#include <cmath>
#include <set>

namespace flood {

using nlohmann::json;
using nlohmann::ordered_json;

std::string kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::cct: return "cct";
    case ModelKind::vit: return "vit";
    case ModelKind::swin: return "swin";
    case ModelKind::eanet: return "eanet";
  }
  return "?";
}

ModelKind parse_kind(const std::string& name) {
  if (name == "cct") return ModelKind::cct;
  if (name == "vit") return ModelKind::vit;
  if (name == "swin") return ModelKind::swin;
  if (name == "eanet") return ModelKind::eanet;
  throw InvalidArgument("unknown model kind '" + name + "' (expected cct, vit, swin or eanet)");
}

Index ModelConfig::mlp_hidden(Index d) const {
  return static_cast<Index>(std::llround(static_cast<double>(d) * mlp_ratio));
}

namespace {

Index pooled(Index size, int kernel, int stride, int padding) {
  return (size + 2 * padding - kernel) / stride + 1;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument("model config: " + what);
}

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw InvalidShape("model config: " + what);
}

}  // namespace

std::pair<Index, Index> ModelConfig::token_grid() const {
  if (kind == ModelKind::cct) {
    Index h = height, w = width;
    for (const auto& b : tokenizer) {
      require_shape(h + 2 * b.padding >= b.kernel && w + 2 * b.padding >= b.kernel,
                    "tokenizer kernel larger than its padded input");
      h = pooled(h, b.kernel, b.stride, b.padding);
      w = pooled(w, b.kernel, b.stride, b.padding);
      if (b.pool_kernel > 0) {
        require_shape(h + 2 * b.pool_padding >= b.pool_kernel && w + 2 * b.pool_padding >= b.pool_kernel,
                      "tokenizer pooling window larger than its padded input");
        h = pooled(h, b.pool_kernel, b.pool_stride, b.pool_padding);
        w = pooled(w, b.pool_kernel, b.pool_stride, b.pool_padding);
      }
      require_shape(h >= 1 && w >= 1, "tokenizer reduces the feature map to nothing");
    }
    return {h, w};
  }
  return {height / patch_size, width / patch_size};
}

void ModelConfig::validate() const {
  require(height >= 1 && width >= 1 && channels >= 1, "input size must be positive");
  require(num_classes >= 2, "num_classes must be at least 2");
  require(mlp_ratio >= 1.0, "mlp_ratio must be at least 1");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(batch_size >= 1, "batch_size must be positive");
  switch (kind) {
    case ModelKind::cct: {
      require(!tokenizer.empty(), "cct needs at least one tokenizer block");
      for (const auto& b : tokenizer) {
        require(b.out_channels >= 1 && b.kernel >= 1 && b.stride >= 1 && b.padding >= 0,
                "invalid tokenizer block geometry");
        require(b.pool_kernel == 0 || (b.pool_stride >= 1 && 2 * b.pool_padding <= b.pool_kernel),
                "invalid tokenizer pooling geometry");
      }
      require_shape(tokenizer.back().out_channels == dim, "last tokenizer block must produce dim channels");
      require(depth >= 1 && heads >= 1 && dim % heads == 0, "dim must be divisible by heads");
      token_grid();
      break;
    }
    case ModelKind::vit:
    case ModelKind::eanet: {
      require(patch_size >= 1, "patch_size must be positive");
      require_shape(height % patch_size == 0 && width % patch_size == 0, "input not divisible by patch_size");
      require(depth >= 1 && dim >= 1, "depth and dim must be positive");
      if (kind == ModelKind::vit) require(heads >= 1 && dim % heads == 0, "dim must be divisible by heads");
      if (kind == ModelKind::eanet) require(memory_units >= 1, "memory_units must be positive");
      break;
    }
    case ModelKind::swin: {
      const std::size_t stages = stage_dims.size();
      require(stages >= 1 && stage_depths.size() == stages && stage_heads.size() == stages &&
                  window_sizes.size() == stages && shift_sizes.size() == stages,
              "swin stage lists must be non-empty and equally long");
      require(patch_size >= 1, "patch_size must be positive");
      require_shape(height % patch_size == 0 && width % patch_size == 0, "input not divisible by patch_size");
      Index gh = height / patch_size, gw = width / patch_size;
      for (std::size_t s = 0; s < stages; ++s) {
        if (s > 0) {
          require_shape(gh % 2 == 0 && gw % 2 == 0, "patch merging needs an even token grid");
          gh /= 2;
          gw /= 2;
        }
        require(stage_depths[s] >= 1 && stage_heads[s] >= 1 && stage_dims[s] % stage_heads[s] == 0,
                "stage dim must be divisible by stage heads");
        const Index ws = window_sizes[s];
        require_shape(ws >= 1 && gh % ws == 0 && gw % ws == 0,
                      "stage " + std::to_string(s) + " grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                          " not divisible by window " + std::to_string(ws));
        require(shift_sizes[s] >= 0 && shift_sizes[s] < ws, "shift must lie in [0, window)");
      }
      break;
    }
  }
}

ModelConfig preset(const std::string& raw) {
  std::string name = raw;
  const std::string suffix = "-afssa";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    name.resize(name.size() - suffix.size());
  }
  ModelConfig c;
  c.kind = parse_kind(name);
  switch (c.kind) {
    case ModelKind::cct:
      c.height = c.width = 128;
      c.tokenizer = {TokenizerBlockSpec{64}, TokenizerBlockSpec{128}};
      c.dim = 128;
      c.depth = 2;
      c.heads = 2;
      c.mlp_ratio = 1.0;
      c.dropout_rate = 0.1;
      c.weight_decay = 0.05;
      c.batch_size = 32;
      break;
    case ModelKind::vit:
      c.height = c.width = 128;
      c.patch_size = 16;
      c.dim = 256;
      c.depth = 12;
      c.heads = 8;
      c.mlp_ratio = 5.0;
      c.dropout_rate = 0.05;
      c.weight_decay = 1e-4;
      c.batch_size = 256;
      break;
    case ModelKind::swin:
      c.height = c.width = 72;
      c.patch_size = 4;
      c.dim = 40;
      c.stage_dims = {40, 80};
      c.stage_depths = {2, 2};
      c.stage_heads = {2, 4};
      c.window_sizes = {6, 3};
      c.shift_sizes = {3, 1};
      c.mlp_ratio = 4.0;
      c.positional_embedding = false;
      c.dropout_rate = 0.03;
      c.weight_decay = 1e-4;
      c.batch_size = 32;
      break;
    case ModelKind::eanet:
      c.height = c.width = 48;
      c.patch_size = 4;
      c.dim = 64;
      c.depth = 7;
      c.memory_units = 64;
      c.mlp_ratio = 4.0;
      c.dropout_rate = 0.02;
      c.weight_decay = 1e-4;
      c.batch_size = 32;
      break;
  }
  return c;
}

std::vector<std::string> preset_names() { return {"cct-afssa", "vit-afssa", "swin-afssa", "eanet-afssa"}; }

ModelConfig with_input_size(ModelConfig config, Index size) {
  config.height = config.width = size;
  config.validate();
  return config;
}

ordered_json config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["kind"] = kind_name(c.kind);
  j["height"] = c.height;
  j["width"] = c.width;
  j["channels"] = c.channels;
  j["num_classes"] = c.num_classes;
  j["dim"] = c.dim;
  j["depth"] = c.depth;
  j["heads"] = c.heads;
  j["mlp_ratio"] = c.mlp_ratio;
  j["dropout_rate"] = c.dropout_rate;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["patch_size"] = c.patch_size;
  ordered_json blocks = ordered_json::array();
  for (const auto& b : c.tokenizer) {
    blocks.push_back({{"out_channels", b.out_channels},
                      {"kernel", b.kernel},
                      {"stride", b.stride},
                      {"padding", b.padding},
                      {"pool_kernel", b.pool_kernel},
                      {"pool_stride", b.pool_stride},
                      {"pool_padding", b.pool_padding}});
  }
  j["tokenizer"] = blocks;
  j["stage_dims"] = c.stage_dims;
  j["stage_depths"] = c.stage_depths;
  j["stage_heads"] = c.stage_heads;
  j["window_sizes"] = c.window_sizes;
  j["shift_sizes"] = c.shift_sizes;
  j["memory_units"] = c.memory_units;
  j["positional_embedding"] = c.positional_embedding;
  j["freeze_positional"] = c.freeze_positional;
  j["seed"] = c.seed;
  return j;
}

namespace {

template <typename V>
void read(const json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config key '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace

ModelConfig config_from_json(const json& j) {
  check_keys(j,
             {"kind", "preset", "height", "width", "channels", "num_classes", "dim", "depth", "heads", "mlp_ratio",
              "dropout_rate", "weight_decay", "batch_size", "patch_size", "tokenizer", "stage_dims", "stage_depths",
              "stage_heads", "window_sizes", "shift_sizes", "memory_units", "positional_embedding",
              "freeze_positional", "seed"},
             "model config");
  std::string base;
  if (j.contains("preset")) {
    read(j, "preset", base);
  } else if (j.contains("kind")) {
    read(j, "kind", base);
  } else {
    throw ConfigError("model config needs 'kind' or 'preset'");
  }
  ModelConfig c;
  try {
    c = preset(base);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("kind") && j.contains("preset")) {
    std::string k;
    read(j, "kind", k);
    if (parse_kind(k) != c.kind) throw ConfigError("model config: 'kind' contradicts 'preset'");
  }
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "channels", c.channels);
  read(j, "num_classes", c.num_classes);
  read(j, "dim", c.dim);
  read(j, "depth", c.depth);
  read(j, "heads", c.heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  read(j, "dropout_rate", c.dropout_rate);
  read(j, "weight_decay", c.weight_decay);
  read(j, "batch_size", c.batch_size);
  read(j, "patch_size", c.patch_size);
  if (auto it = j.find("tokenizer"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("model config key 'tokenizer' must be an array");
    c.tokenizer.clear();
    for (const auto& b : *it) {
      check_keys(b, {"out_channels", "kernel", "stride", "padding", "pool_kernel", "pool_stride", "pool_padding"},
                 "tokenizer block");
      TokenizerBlockSpec s;
      read(b, "out_channels", s.out_channels);
      read(b, "kernel", s.kernel);
      read(b, "stride", s.stride);
      read(b, "padding", s.padding);
      read(b, "pool_kernel", s.pool_kernel);
      read(b, "pool_stride", s.pool_stride);
      read(b, "pool_padding", s.pool_padding);
      c.tokenizer.push_back(s);
    }
  }
  read(j, "stage_dims", c.stage_dims);
  read(j, "stage_depths", c.stage_depths);
  read(j, "stage_heads", c.stage_heads);
  read(j, "window_sizes", c.window_sizes);
  read(j, "shift_sizes", c.shift_sizes);
  read(j, "memory_units", c.memory_units);
  read(j, "positional_embedding", c.positional_embedding);
  read(j, "freeze_positional", c.freeze_positional);
  read(j, "seed", c.seed);
  if (c.kind == ModelKind::swin && !c.stage_dims.empty()) c.dim = c.stage_dims.front();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

namespace {

Index linear_count(Index in, Index out, bool bias = true) { return in * out + (bias ? out : 0); }
Index norm_count(Index d) { return 2 * d; }
Index mlp_count(Index d, Index hidden) { return linear_count(d, hidden) + linear_count(hidden, d); }
Index attention_count(Index d) { return 4 * linear_count(d, d); }

}  // namespace

ParameterCount analytic_parameter_count(const ModelConfig& c) {
  c.validate();
  ParameterCount pc;
  Index frozen = 0;
  const Index k = c.num_classes;
  switch (c.kind) {
    case ModelKind::cct: {
      Index cin = c.channels;
      for (const auto& b : c.tokenizer) {
        pc.total += static_cast<Index>(b.kernel) * b.kernel * cin * b.out_channels;
        cin = b.out_channels;
      }
      const auto [gh, gw] = c.token_grid();
      if (c.positional_embedding) {
        pc.total += gh * gw * c.dim;
        if (c.freeze_positional) frozen += gh * gw * c.dim;
      }
      const Index block = 2 * norm_count(c.dim) + attention_count(c.dim) + mlp_count(c.dim, c.mlp_hidden(c.dim));
      pc.total += c.depth * block + norm_count(c.dim) + linear_count(c.dim, 1) + linear_count(c.dim, k);
      break;
    }
    case ModelKind::vit: {
      const Index l = (c.height / c.patch_size) * (c.width / c.patch_size);
      pc.total += linear_count(c.patch_size * c.patch_size * c.channels, c.dim) + c.dim;  // + class token
      if (c.positional_embedding) {
        pc.total += (l + 1) * c.dim;
        if (c.freeze_positional) frozen += (l + 1) * c.dim;
      }
      const Index block = 2 * norm_count(c.dim) + attention_count(c.dim) + mlp_count(c.dim, c.mlp_hidden(c.dim));
      pc.total += c.depth * block + norm_count(c.dim) + linear_count(c.dim, k);
      break;
    }
    case ModelKind::swin: {
      const Index d0 = c.stage_dims.front();
      pc.total += linear_count(c.patch_size * c.patch_size * c.channels, d0) + norm_count(d0);
      if (c.positional_embedding) {
        const Index l = (c.height / c.patch_size) * (c.width / c.patch_size);
        pc.total += l * d0;
        if (c.freeze_positional) frozen += l * d0;
      }
      for (std::size_t s = 0; s < c.stage_dims.size(); ++s) {
        const Index d = c.stage_dims[s];
        if (s > 0) {
          const Index prev = c.stage_dims[s - 1];
          pc.total += norm_count(4 * prev) + linear_count(4 * prev, d, false);
        }
        const Index span = 2 * c.window_sizes[s] - 1;
        const Index block = 2 * norm_count(d) + attention_count(d) + span * span * c.stage_heads[s] +
                            mlp_count(d, c.mlp_hidden(d));
        pc.total += c.stage_depths[s] * block;
      }
      const Index dl = c.stage_dims.back();
      pc.total += norm_count(dl) + linear_count(dl, k);
      break;
    }
    case ModelKind::eanet: {
      const Index l = (c.height / c.patch_size) * (c.width / c.patch_size);
      pc.total += linear_count(c.patch_size * c.patch_size * c.channels, c.dim);
      if (c.positional_embedding) {
        pc.total += l * c.dim;
        if (c.freeze_positional) frozen += l * c.dim;
      }
      const Index block =
          2 * norm_count(c.dim) + 2 * c.memory_units * c.dim + mlp_count(c.dim, c.mlp_hidden(c.dim));
      pc.total += c.depth * block + norm_count(c.dim) + linear_count(c.dim, k);
      break;
    }
  }
  pc.trainable = pc.total - frozen;
  return pc;
}

}  // namespace flood
