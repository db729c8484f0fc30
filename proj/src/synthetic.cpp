#include "flood/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "flood/random.hpp"

namespace flood {

const std::vector<std::string>& afssa_class_names() {
  static const std::vector<std::string> names = {"flood", "flood_with_domicile", "flood_with_humans", "no_flood"};
  return names;
}

namespace {

std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

void water(Image& img, Rng& rng) {
  const double base[3] = {rng.uniform(80, 120), rng.uniform(95, 125), rng.uniform(110, 150)};
  const double fx = rng.uniform(0.15, 0.45), fy = rng.uniform(0.05, 0.3), phase = rng.uniform(0, 6.283);
  const double amp = rng.uniform(10, 22);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x) {
      const double ripple = amp * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      const double noise = rng.uniform(-8, 8);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp8(base[c] + ripple + noise);
    }
}

void vegetation(Image& img, Rng& rng) {
  const double base[3] = {rng.uniform(40, 80), rng.uniform(110, 150), rng.uniform(30, 60)};
  const double fx = rng.uniform(0.05, 0.15), fy = rng.uniform(0.05, 0.15), phase = rng.uniform(0, 6.283);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x) {
      const double patch = 18.0 * std::sin(fx * static_cast<double>(x) + phase) * std::cos(fy * static_cast<double>(y));
      const double noise = rng.uniform(-20, 20);
      img.at(y, x, 0) = clamp8(base[0] + 0.5 * patch + noise);
      img.at(y, x, 1) = clamp8(base[1] + patch + noise);
      img.at(y, x, 2) = clamp8(base[2] + 0.3 * patch + 0.5 * noise);
    }
}

void roofs(Image& img, Rng& rng) {
  const Index s = img.height;
  const int count = 2 + static_cast<int>(rng.below(3));
  for (int r = 0; r < count; ++r) {
    const Index h = s / 8 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(s / 8 + 1)));
    const Index w = s / 8 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(s / 8 + 1)));
    const Index y0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(s - h)));
    const Index x0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(img.width - w)));
    double colour[3];
    switch (rng.below(3)) {
      case 0: colour[0] = 175; colour[1] = 65; colour[2] = 50; break;
      case 1: colour[0] = 150; colour[1] = 150; colour[2] = 155; break;
      default: colour[0] = 200; colour[1] = 190; colour[2] = 170; break;
    }
    for (Index y = y0; y < y0 + h; ++y)
      for (Index x = x0; x < x0 + w; ++x) {
        const bool edge = y == y0 || x == x0 || y == y0 + h - 1 || x == x0 + w - 1;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp8(edge ? 40.0 : colour[c] + rng.uniform(-6, 6));
      }
  }
}

void specks(Image& img, Rng& rng) {
  const int count = 8 + static_cast<int>(rng.below(9));
  for (int k = 0; k < count; ++k) {
    const Index y0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(img.height - 2)));
    const Index x0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(img.width - 2)));
    const double b = rng.uniform(225, 255);
    for (Index y = y0; y < y0 + 2; ++y)
      for (Index x = x0; x < x0 + 2; ++x) {
        img.at(y, x, 0) = clamp8(b);
        img.at(y, x, 1) = clamp8(b - 10);
        img.at(y, x, 2) = clamp8(b - 40);
      }
  }
}

}  // namespace

Image synthetic_scene(int label, Index size, std::uint64_t seed) {
  if (label < 0 || label > 3) throw InvalidArgument("synthetic_scene: label must be in [0, 4)");
  if (size < 16) throw InvalidArgument("synthetic_scene: size must be at least 16");
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(label)}));
  Image img(size, size);
  if (label == 3) {
    vegetation(img, rng);
  } else {
    water(img, rng);
    if (label == 1) roofs(img, rng);
    if (label == 2) specks(img, rng);
  }
  return img;
}

std::size_t write_synthetic_corpus(const std::filesystem::path& root, const SyntheticCorpusSpec& spec) {
  if (spec.per_class.size() > afssa_class_names().size()) throw InvalidArgument("at most 4 synthetic classes");
  if (spec.frames_per_sequence < 1) throw InvalidArgument("frames_per_sequence must be positive");
  std::size_t written = 0;
  for (std::size_t c = 0; c < spec.per_class.size(); ++c) {
    const auto dir = root / afssa_class_names()[c];
    std::filesystem::create_directories(dir);
    for (int i = 0; i < spec.per_class[c]; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "seq%03d_%05d", i / spec.frames_per_sequence, i % spec.frames_per_sequence);
      const auto img = synthetic_scene(static_cast<int>(c), spec.size, derive_seed(spec.seed, {c, static_cast<std::uint64_t>(i)}));
      write_image(dir / (std::string(name) + spec.extension), img);
      ++written;
    }
  }
  return written;
}

}  // namespace flood
