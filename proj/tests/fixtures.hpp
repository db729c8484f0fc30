#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "flood/dataset.hpp"
#include "flood/model_config.hpp"
#include "flood/random.hpp"

namespace testing {

// A CCT small enough to train for a few epochs inside a unit test.
inline nlohmann::json tiny_cct_override() {
  return {{"tokenizer", {{{"out_channels", 8}}, {{"out_channels", 16}}}}, {"dim", 16}, {"depth", 1}, {"heads", 2}};
}

inline flood::ModelConfig tiny_cct(flood::Index size, std::uint64_t seed = 0) {
  auto j = nlohmann::json::parse(flood::config_to_json(flood::preset("cct")).dump());
  const auto over = tiny_cct_override();
  for (auto it = over.begin(); it != over.end(); ++it) j[it.key()] = it.value();
  j["height"] = j["width"] = size;
  j["seed"] = seed;
  return flood::config_from_json(j);
}

// Four classes of noisy flat colours: linearly separable on the mean pixel.
// Splits are assigned in file order: per class `train`, then `val`, then `test`.
inline flood::DatasetManifest color_corpus(const std::filesystem::path& root, int train, int val, int test,
                                           flood::Index size = 16, std::uint64_t seed = 1) {
  using namespace flood;
  static const int base[4][3] = {{200, 40, 40}, {40, 200, 40}, {40, 40, 200}, {200, 200, 40}};
  const std::vector<std::string> names{"flood", "flood_with_domicile", "flood_with_humans", "no_flood"};
  Rng rng(seed);
  DatasetManifest m;
  m.root = root;
  m.class_names = names;
  for (int c = 0; c < 4; ++c) {
    std::filesystem::create_directories(root / names[static_cast<std::size_t>(c)]);
    for (int i = 0; i < train + val + test; ++i) {
      Image img(size, size);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x)
          for (int ch = 0; ch < 3; ++ch)
            img.at(y, x, ch) = static_cast<std::uint8_t>(base[c][ch] + static_cast<int>(rng.below(31)) - 15);
      ManifestItem it;
      it.path = names[static_cast<std::size_t>(c)] + "/s" + std::to_string(c) + "_" + std::to_string(1000 + i) + ".png";
      it.label = c;
      it.sequence = "s" + std::to_string(c);
      it.frame = 1000 + i;
      it.split = i < train ? Split::train : i < train + val ? Split::val : Split::test;
      write_image(root / it.path, img);
      m.items.push_back(it);
    }
  }
  return m;
}

inline flood::PipelineOptions plain_pipeline(flood::Index size) {
  flood::PipelineOptions p;
  p.input_size = size;
  p.clahe = false;
  p.augment = false;
  return p;
}

}  // namespace testing
