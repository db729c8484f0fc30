#include "flood/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "flood/random.hpp"

namespace flood {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string split_name(Split s) {
  switch (s) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  throw InvalidArgument("unknown split '" + s + "' (expected train, val or test)");
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [s](const ManifestItem& it) { return it.split == s; }));
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].split == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> out(class_names.size(), 0);
  for (const auto& it : items) ++out[static_cast<std::size_t>(it.label)];
  return out;
}

namespace {

void parse_sequence(const std::string& stem, ManifestItem& item) {
  item.sequence = stem;
  item.frame = 0;
  const auto us = stem.rfind('_');
  if (us == std::string::npos || us + 1 >= stem.size()) return;
  Index frame = 0;
  const char* first = stem.data() + us + 1;
  const char* last = stem.data() + stem.size();
  auto [ptr, ec] = std::from_chars(first, last, frame);
  if (ec != std::errc{} || ptr != last) return;
  item.sequence = stem.substr(0, us);
  item.frame = frame;
}

}  // namespace

DatasetManifest scan_corpus(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  if (!fs::is_directory(root)) throw InvalidArgument("corpus root " + root.string() + " is not a directory");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (name.empty() || name[0] == '.') continue;
    if (e.is_directory()) {
      classes.push_back(e.path());
    } else {
      m.warnings.push_back("ignoring file outside class directories: " + name);
    }
  }
  std::sort(classes.begin(), classes.end());
  for (const auto& dir : classes) {
    const int label = static_cast<int>(m.class_names.size());
    const std::string cname = dir.filename().string();
    m.class_names.push_back(cname);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.empty() || name[0] == '.') continue;
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t kept = 0;
    for (const auto& f : files) {
      const std::string rel = cname + "/" + f.filename().string();
      std::vector<std::uint8_t> head(8);
      {
        std::ifstream in(f, std::ios::binary);
        if (!in) {
          m.errors.push_back(rel + ": cannot open");
          continue;
        }
        in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
        head.resize(static_cast<std::size_t>(in.gcount()));
      }
      if (sniff_format(head) == ImageFormat::unknown) {
        m.errors.push_back(rel + ": not a PNG or binary PPM file");
        continue;
      }
      ManifestItem item;
      item.path = rel;
      item.label = label;
      parse_sequence(f.stem().string(), item);
      m.items.push_back(std::move(item));
      ++kept;
    }
    if (kept == 0) m.warnings.push_back("class directory '" + cname + "' contains no images");
  }
  return m;
}

std::vector<std::size_t> subsample_frames(std::size_t count, int stride) {
  if (stride < 1) throw InvalidArgument("subsample stride must be at least 1");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(stride)) out.push_back(i);
  return out;
}

DatasetManifest subsample_manifest(const DatasetManifest& manifest, int stride) {
  if (stride < 1) throw InvalidArgument("subsample stride must be at least 1");
  std::map<std::pair<int, std::string>, std::vector<std::size_t>> runs;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    runs[{manifest.items[i].label, manifest.items[i].sequence}].push_back(i);
  }
  std::vector<bool> keep(manifest.items.size(), false);
  for (auto& [key, idx] : runs) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return manifest.items[a].frame < manifest.items[b].frame; });
    for (std::size_t k : subsample_frames(idx.size(), stride)) keep[idx[k]] = true;
  }
  DatasetManifest out = manifest;
  out.items.clear();
  for (std::size_t i = 0; i < manifest.items.size(); ++i)
    if (keep[i]) out.items.push_back(manifest.items[i]);
  out.subsample_stride = manifest.subsample_stride * stride;
  return out;
}

DatasetManifest stratified_split(const DatasetManifest& manifest, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw InvalidArgument("split fractions must be non-negative and sum to 1");
  }
  DatasetManifest out = manifest;
  out.seed = seed;
  for (std::size_t c = 0; c < manifest.class_names.size(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < out.items.size(); ++i)
      if (out.items[i].label == static_cast<int>(c)) idx.push_back(i);
    if (idx.size() < 3) {
      throw InvalidArgument("class '" + manifest.class_names[c] + "' has " + std::to_string(idx.size()) +
                            " items; at least 3 are needed to split");
    }
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c)}));
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    const double n = static_cast<double>(idx.size());
    // The epsilon keeps products like 0.7 * 10 from flooring to 6.
    const auto n_train = static_cast<std::size_t>(std::floor(n * f.train + 1e-9));
    const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::floor(n * f.val + 1e-9)));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.items[idx[k]].split = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
    }
  }
  return out;
}

ordered_json manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["version"] = DatasetManifest::kVersion;
  j["seed"] = m.seed;
  j["root"] = m.root.string();
  j["class_names"] = m.class_names;
  j["subsample_stride"] = m.subsample_stride;
  ordered_json items = ordered_json::array();
  for (const auto& it : m.items) {
    items.push_back({{"path", it.path},
                     {"class", it.label},
                     {"split", split_name(it.split)},
                     {"sequence", it.sequence},
                     {"frame", it.frame}});
  }
  j["items"] = std::move(items);
  j["warnings"] = m.warnings;
  j["errors"] = m.errors;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
    const int version = j.at("version").get<int>();
    if (version > DatasetManifest::kVersion) {
      throw UnsupportedVersion("manifest version " + std::to_string(version) + " is newer than supported version " +
                               std::to_string(DatasetManifest::kVersion));
    }
    DatasetManifest m;
    m.seed = j.value("seed", std::uint64_t{0});
    m.root = j.value("root", std::string{});
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.subsample_stride = j.value("subsample_stride", 1);
    for (const auto& it : j.at("items")) {
      ManifestItem item;
      item.path = it.at("path").get<std::string>();
      item.label = it.at("class").get<int>();
      item.split = parse_split(it.value("split", std::string("unassigned")));
      item.sequence = it.value("sequence", std::string{});
      item.frame = it.value("frame", Index{0});
      if (item.label < 0 || item.label >= static_cast<int>(m.class_names.size())) {
        throw ConfigError("manifest item '" + item.path + "' has class " + std::to_string(item.label) +
                          " outside the class list");
      }
      m.items.push_back(std::move(item));
    }
    m.warnings = j.value("warnings", std::vector<std::string>{});
    m.errors = j.value("errors", std::vector<std::string>{});
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << manifest_to_json(manifest).dump(2) << "\n";
  if (!out) throw Error("failed writing manifest " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  auto m = manifest_from_json(j);
  if (m.root.empty()) {
    m.root = path.parent_path();
  } else if (m.root.is_relative()) {
    m.root = path.parent_path() / m.root;
  }
  return m;
}

std::vector<std::vector<ItemRef>> plan_batches(const DatasetManifest& manifest, Split split, Index batch_size,
                                               std::uint64_t epoch_seed, int copies_per_image) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  std::vector<ItemRef> rows;
  for (std::size_t i : manifest.indices(split)) {
    rows.push_back({i, -1});
    if (split == Split::train)
      for (int c = 0; c < copies_per_image; ++c) rows.push_back({i, c});
  }
  if (split == Split::train) {
    Rng rng(derive_seed(epoch_seed, {0x7e41}));
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.below(i)]);
  }
  std::vector<std::vector<ItemRef>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t s = 0; s < rows.size(); s += bs) {
    batches.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(s),
                         rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), s + bs)));
  }
  return batches;
}

BatchLoader::BatchLoader(const DatasetManifest& manifest, PipelineOptions options)
    : manifest_(manifest), options_(std::move(options)) {
  if (options_.input_size < 1) throw InvalidArgument("input_size must be positive");
  if (options_.augment) options_.augmentation.validate();
}

const Image& BatchLoader::base_image(std::size_t item) {
  auto it = cache_.find(item);
  if (it != cache_.end()) return it->second;
  const auto& entry = manifest_.items.at(item);
  Image img = read_image(manifest_.root / entry.path);
  if (options_.clahe) {
    ClaheParams p = options_.clahe_params;
    p.tiles_x = static_cast<int>(std::min<Index>(p.tiles_x, img.width));
    p.tiles_y = static_cast<int>(std::min<Index>(p.tiles_y, img.height));
    img = clahe(img, p);
  }
  return cache_.emplace(item, std::move(img)).first->second;
}

Image BatchLoader::prepare(const ItemRef& ref) {
  const Image& base = base_image(ref.item);
  const Index s = options_.input_size;
  if (ref.augmented()) {
    return resize_bilinear(augment(base, options_.augmentation, hash_string(manifest_.items[ref.item].path), ref.copy),
                           s, s);
  }
  return resize_bilinear(base, s, s);
}

Batch BatchLoader::load(const std::vector<ItemRef>& rows) {
  if (rows.empty()) throw InvalidArgument("cannot assemble an empty batch");
  const Index s = options_.input_size;
  Batch b;
  b.images = Tensor<float>(Shape{static_cast<Index>(rows.size()), s, s, 3});
  auto dst = b.images.data();
  const std::size_t per = static_cast<std::size_t>(s * s * 3);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    normalize_into(prepare(rows[r]), dst.subspan(r * per, per));
    b.labels.push_back(manifest_.items[rows[r].item].label);
    b.provenance.push_back(rows[r]);
  }
  return b;
}

std::vector<Batch> BatchLoader::make_batches(Split split, Index batch_size, std::uint64_t epoch_seed) {
  const int copies = options_.augment ? options_.augmentation.copies_per_image : 0;
  std::vector<Batch> out;
  for (const auto& rows : plan_batches(manifest_, split, batch_size, epoch_seed, copies)) out.push_back(load(rows));
  return out;
}

DatasetManifest materialize_corpus(const DatasetManifest& manifest, const PipelineOptions& options,
                                   const fs::path& out_dir) {
  BatchLoader loader(manifest, options);
  DatasetManifest out = manifest;
  out.root = out_dir;
  out.items.clear();
  const int copies = options.augment ? options.augmentation.copies_per_image : 0;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    const auto& src = manifest.items[i];
    const fs::path rel = fs::path(src.path).replace_extension();
    for (int c = -1; c < copies; ++c) {
      ManifestItem item = src;
      item.path = (c < 0 ? rel.string() : rel.string() + "_aug" + std::to_string(c)) + ".png";
      fs::create_directories((out_dir / item.path).parent_path());
      write_image(out_dir / item.path, loader.prepare(ItemRef{i, c}));
      out.items.push_back(std::move(item));
    }
  }
  return out;
}

}  // namespace flood
