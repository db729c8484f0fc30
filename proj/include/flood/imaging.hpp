#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "flood/image.hpp"
#include "flood/tensor.hpp"

namespace flood {

// Half-pixel aligned bilinear resampling: output pixel i samples source
// coordinate (i + 0.5) * in / out - 0.5, clamped to the edge.
Image resize_bilinear(const Image& img, Index out_h, Index out_w);

struct ClaheParams {
  int tiles_x = 8;
  int tiles_y = 8;
  double clip_limit = 2.0;  // multiple of the uniform bin height
};

using ToneMap = std::array<std::uint8_t, 256>;

// Per-tile Y mappings, row-major over the tile grid. A tile whose histogram
// occupies a single bin maps to the identity.
std::vector<ToneMap> clahe_tile_mappings(const Image& img, const ClaheParams& params);

// Contrast-limited adaptive equalization of luminance (BT.601 YCbCr); chroma
// is carried through unchanged.
Image clahe(const Image& img, const ClaheParams& params);

struct AugmentationSpec {
  double rotation_max_deg = 45.0;
  double width_shift = 0.3;
  double height_shift = 0.3;
  double shear = 0.3;
  double zoom = 0.3;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  int copies_per_image = 6;
  std::uint64_t seed = 0;

  void validate() const;
  bool is_identity() const;
};

// One sampled transform. Applied to centered coordinates in the order
// flip, rotate, shear, zoom, translate.
struct AffineSample {
  bool flip_h = false, flip_v = false;
  double rotation_deg = 0.0;
  double shear = 0.0;
  double zoom = 1.0;
  double shift_x = 0.0, shift_y = 0.0;  // pixels
};

// Deterministic in (spec.seed, image_key, copy_index).
AffineSample sample_augmentation(const AugmentationSpec& spec, Index height, Index width, std::uint64_t image_key,
                                 int copy_index);

// Inverse-mapped bilinear warp with half-sample symmetric reflection at the border.
Image apply_affine(const Image& img, const AffineSample& t);

// image_key identifies the source image (hash of its relative path).
Image augment(const Image& img, const AugmentationSpec& spec, std::uint64_t image_key, int copy_index);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);

// Pixels / 255 into dst (H*W*3 values).
void normalize_into(const Image& img, std::span<float> dst);
Tensor<float> normalize(const Image& img);  // [H,W,3]

}  // namespace flood
