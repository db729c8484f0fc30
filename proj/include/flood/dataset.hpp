#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flood/imaging.hpp"

namespace flood {

enum class Split { unassigned, train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);  // throws InvalidArgument

struct ManifestItem {
  std::string path;  // relative to the manifest root
  int label = 0;
  Split split = Split::unassigned;
  std::string sequence;
  Index frame = 0;
  friend bool operator==(const ManifestItem&, const ManifestItem&) = default;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  std::filesystem::path root;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestItem> items;
  int subsample_stride = 1;
  std::vector<std::string> warnings;
  std::vector<std::string> errors;  // "<path>: <reason>" for files that could not be read

  std::size_t count(Split s) const;
  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> class_counts() const;
};

// One directory per class; classes and files sorted lexicographically. Files
// named <sequence>_<frame> carry their sequence id and frame index.
DatasetManifest scan_corpus(const std::filesystem::path& root);

// Indices 0, stride, 2*stride, ... of `count` ordered frames.
std::vector<std::size_t> subsample_frames(std::size_t count, int stride);
// Applies subsample_frames to every (class, sequence) run, ordered by frame.
DatasetManifest subsample_manifest(const DatasetManifest& manifest, int stride);

struct SplitFractions {
  double train = 0.70, val = 0.10, test = 0.20;
};

// Per class: seeded shuffle, floor(n*train) to train, floor(n*val) to val,
// the remainder to test.
DatasetManifest stratified_split(const DatasetManifest& manifest, SplitFractions fractions, std::uint64_t seed);

nlohmann::ordered_json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// A relative "root" in the file resolves against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);

struct PipelineOptions {
  Index input_size = 128;
  bool clahe = true;
  ClaheParams clahe_params{};
  bool augment = true;  // training split only
  AugmentationSpec augmentation{};
};

// Where a batch row came from. copy < 0 marks the original image.
struct ItemRef {
  std::size_t item = 0;
  int copy = -1;
  bool augmented() const { return copy >= 0; }
  friend bool operator==(const ItemRef&, const ItemRef&) = default;
};

struct Batch {
  Tensor<float> images;  // [N, S, S, 3]
  std::vector<int> labels;
  std::vector<ItemRef> provenance;
};

// Row order for one pass over a split. Train: originals plus copies when
// augmenting, shuffled by epoch_seed. Val/test: manifest order, originals only.
std::vector<std::vector<ItemRef>> plan_batches(const DatasetManifest& manifest, Split split, Index batch_size,
                                               std::uint64_t epoch_seed, int copies_per_image);

// Decodes (and CLAHE-processes) each image once and keeps it in memory.
class BatchLoader {
 public:
  BatchLoader(const DatasetManifest& manifest, PipelineOptions options);

  Batch load(const std::vector<ItemRef>& rows);
  std::vector<Batch> make_batches(Split split, Index batch_size, std::uint64_t epoch_seed);

  // decode -> clahe -> augment -> resize, no caching of the result.
  Image prepare(const ItemRef& ref);

  const DatasetManifest& manifest() const { return manifest_; }
  const PipelineOptions& options() const { return options_; }

 private:
  const Image& base_image(std::size_t item);

  const DatasetManifest& manifest_;
  PipelineOptions options_;
  std::unordered_map<std::size_t, Image> cache_;
};

// Writes every item through the pipeline (CLAHE, resize) to out_dir as PNG,
// plus copies_per_image augmented copies of each when options.augment is set.
// Copies keep the split, sequence and frame of their source, so N items
// become N + copies*N. Returns a manifest rooted at out_dir.
DatasetManifest materialize_corpus(const DatasetManifest& manifest, const PipelineOptions& options,
                                   const std::filesystem::path& out_dir);

}  // namespace flood
