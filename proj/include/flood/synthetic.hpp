#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flood/image.hpp"

namespace flood {

// Class directory names, in the lexicographic order scan_corpus assigns labels.
const std::vector<std::string>& afssa_class_names();

// Procedural aerial-like scene for class `label`:
//   0 flood                rippled muddy water
//   1 flood_with_domicile  water plus rectangular roofs
//   2 flood_with_humans    water plus bright specks
//   3 no_flood             green vegetation texture
Image synthetic_scene(int label, Index size, std::uint64_t seed);

struct SyntheticCorpusSpec {
  std::vector<int> per_class = {100, 100, 100, 100};
  Index size = 64;
  std::uint64_t seed = 0;
  int frames_per_sequence = 10;  // files are named <sequence>_<frame>
  std::string extension = ".png";
};

// Writes <root>/<class>/<seq>_<frame><ext>; returns the number of files.
std::size_t write_synthetic_corpus(const std::filesystem::path& root, const SyntheticCorpusSpec& spec);

}  // namespace flood
