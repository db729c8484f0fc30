#include "flood/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flood/random.hpp"

namespace flood {

namespace {

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

Image resize_bilinear(const Image& img, Index out_h, Index out_w) {
  if (out_h < 1 || out_w < 1) throw InvalidArgument("resize: output dimensions must be positive");
  if (img.empty()) throw InvalidArgument("resize: empty image");
  if (out_h == img.height && out_w == img.width) return img;
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  struct Tap {
    Index i0, i1;
    double f;
  };
  auto taps = [](Index out, double scale, Index in) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    for (Index i = 0; i < out; ++i) {
      const double s = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<Index>(std::floor(s));
      t[static_cast<std::size_t>(i)] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, sy, img.height);
  const auto tx = taps(out_w, sx, img.width);
  Image out(out_h, out_w);
  for (Index y = 0; y < out_h; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (Index x = 0; x < out_w; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(a.i0, b.i0, c) * (1.0 - b.f) + img.at(a.i0, b.i1, c) * b.f;
        const double bottom = img.at(a.i1, b.i0, c) * (1.0 - b.f) + img.at(a.i1, b.i1, c) * b.f;
        out.at(y, x, c) = to_u8(top * (1.0 - a.f) + bottom * a.f);
      }
    }
  }
  return out;
}

namespace {

struct Ycc {
  std::vector<std::uint8_t> y;
  std::vector<double> cb, cr;
};

Ycc to_ycbcr(const Image& img) {
  const std::size_t n = static_cast<std::size_t>(img.height * img.width);
  Ycc out{std::vector<std::uint8_t>(n), std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int ri = img.pixels[3 * i], gi = img.pixels[3 * i + 1], bi = img.pixels[3 * i + 2];
    // Integer luma so exact .5 ties round the same way on every platform.
    out.y[i] = static_cast<std::uint8_t>((299 * ri + 587 * gi + 114 * bi + 500) / 1000);
    const double r = ri, g = gi, b = bi;
    out.cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
    out.cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
  }
  return out;
}

// Tile boundaries: tile i spans [start(i), start(i+1)).
Index tile_start(Index i, Index tiles, Index extent) { return i * extent / tiles; }

ToneMap tile_mapping(const std::uint8_t* yplane, Index width, Index y0, Index y1, Index x0, Index x1, double clip) {
  std::array<double, 256> hist{};
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) hist[yplane[y * width + x]] += 1.0;
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));

  ToneMap map;
  int occupied = 0;
  for (double h : hist) occupied += h > 0.0;
  if (occupied <= 1) {
    for (int v = 0; v < 256; ++v) map[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(v);
    return map;
  }

  const double limit = clip * n / 256.0;
  double excess = 0.0;
  for (double& h : hist) {
    if (h > limit) {
      excess += h - limit;
      h = limit;
    }
  }
  const double share = excess / 256.0;
  for (double& h : hist) h += share;

  double cdf = 0.0, cdf_min = -1.0;
  for (int v = 0; v < 256; ++v) {
    cdf += hist[static_cast<std::size_t>(v)];
    if (cdf_min < 0.0 && hist[static_cast<std::size_t>(v)] > 0.0) cdf_min = cdf;
    if (cdf_min < 0.0) {
      map[static_cast<std::size_t>(v)] = 0;
    } else {
      const double denom = n - cdf_min;
      map[static_cast<std::size_t>(v)] = denom > 0.0 ? to_u8((cdf - cdf_min) / denom * 255.0) : 255;
    }
  }
  return map;
}

void check_clahe(const Image& img, const ClaheParams& p) {
  if (img.empty()) throw InvalidArgument("clahe: empty image");
  if (p.tiles_x < 1 || p.tiles_y < 1) throw InvalidArgument("clahe: tile counts must be at least 1");
  if (!(p.clip_limit >= 1.0)) throw InvalidArgument("clahe: clip_limit must be at least 1");
  if (p.tiles_x > img.width || p.tiles_y > img.height) {
    throw InvalidArgument("clahe: tile grid " + std::to_string(p.tiles_x) + "x" + std::to_string(p.tiles_y) +
                          " is larger than the " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          " image");
  }
}

std::vector<ToneMap> mappings(const std::vector<std::uint8_t>& yplane, Index h, Index w, const ClaheParams& p) {
  std::vector<ToneMap> maps;
  maps.reserve(static_cast<std::size_t>(p.tiles_x * p.tiles_y));
  for (int ty = 0; ty < p.tiles_y; ++ty)
    for (int tx = 0; tx < p.tiles_x; ++tx)
      maps.push_back(tile_mapping(yplane.data(), w, tile_start(ty, p.tiles_y, h), tile_start(ty + 1, p.tiles_y, h),
                                  tile_start(tx, p.tiles_x, w), tile_start(tx + 1, p.tiles_x, w), p.clip_limit));
  return maps;
}

struct Blend {
  int t0, t1;
  double f;  // weight of t1
};

// Interpolation between the two nearest tile centres along one axis.
std::vector<Blend> blends(Index extent, int tiles) {
  std::vector<double> centre(static_cast<std::size_t>(tiles));
  for (int t = 0; t < tiles; ++t) {
    centre[static_cast<std::size_t>(t)] =
        0.5 * static_cast<double>(tile_start(t, tiles, extent) + tile_start(t + 1, tiles, extent) - 1);
  }
  std::vector<Blend> out(static_cast<std::size_t>(extent));
  for (Index i = 0; i < extent; ++i) {
    const double p = static_cast<double>(i);
    Blend b{0, 0, 0.0};
    if (p <= centre.front()) {
      b = {0, 0, 0.0};
    } else if (p >= centre.back()) {
      b = {tiles - 1, tiles - 1, 0.0};
    } else {
      int t = 0;
      while (centre[static_cast<std::size_t>(t + 1)] < p) ++t;
      const double c0 = centre[static_cast<std::size_t>(t)], c1 = centre[static_cast<std::size_t>(t + 1)];
      b = {t, t + 1, (p - c0) / (c1 - c0)};
    }
    out[static_cast<std::size_t>(i)] = b;
  }
  return out;
}

}  // namespace

std::vector<ToneMap> clahe_tile_mappings(const Image& img, const ClaheParams& params) {
  check_clahe(img, params);
  return mappings(to_ycbcr(img).y, img.height, img.width, params);
}

Image clahe(const Image& img, const ClaheParams& params) {
  check_clahe(img, params);
  const Ycc ycc = to_ycbcr(img);
  const auto maps = mappings(ycc.y, img.height, img.width, params);
  const auto by = blends(img.height, params.tiles_y);
  const auto bx = blends(img.width, params.tiles_x);
  Image out(img.height, img.width);
  for (Index y = 0; y < img.height; ++y) {
    const Blend& vy = by[static_cast<std::size_t>(y)];
    for (Index x = 0; x < img.width; ++x) {
      const Blend& vx = bx[static_cast<std::size_t>(x)];
      const std::size_t i = static_cast<std::size_t>(y * img.width + x);
      const std::uint8_t v = ycc.y[i];
      auto m = [&](int ty, int tx) {
        return static_cast<double>(maps[static_cast<std::size_t>(ty * params.tiles_x + tx)][v]);
      };
      const double top = m(vy.t0, vx.t0) * (1.0 - vx.f) + m(vy.t0, vx.t1) * vx.f;
      const double bottom = m(vy.t1, vx.t0) * (1.0 - vx.f) + m(vy.t1, vx.t1) * vx.f;
      const double yy = top * (1.0 - vy.f) + bottom * vy.f;
      const double cb = ycc.cb[i], cr = ycc.cr[i];
      out.pixels[3 * i] = to_u8(yy + 1.402 * cr);
      out.pixels[3 * i + 1] = to_u8(yy - 0.344136 * cb - 0.714136 * cr);
      out.pixels[3 * i + 2] = to_u8(yy + 1.772 * cb);
    }
  }
  return out;
}

void AugmentationSpec::validate() const {
  if (rotation_max_deg < 0 || width_shift < 0 || height_shift < 0 || shear < 0 || zoom < 0) {
    throw InvalidArgument("augmentation ranges must be non-negative");
  }
  if (zoom >= 1.0) throw InvalidArgument("augmentation zoom range must be below 1");
  if (copies_per_image < 0) throw InvalidArgument("copies_per_image must be non-negative");
}

bool AugmentationSpec::is_identity() const {
  return rotation_max_deg == 0 && width_shift == 0 && height_shift == 0 && shear == 0 && zoom == 0 &&
         !horizontal_flip && !vertical_flip;
}

AffineSample sample_augmentation(const AugmentationSpec& spec, Index height, Index width, std::uint64_t image_key,
                                 int copy_index) {
  spec.validate();
  if (copy_index < 0 || copy_index >= spec.copies_per_image) {
    throw InvalidArgument("copy_index " + std::to_string(copy_index) + " outside [0, " +
                          std::to_string(spec.copies_per_image) + ")");
  }
  Rng rng(derive_seed(spec.seed, {image_key, static_cast<std::uint64_t>(copy_index)}));
  AffineSample t;
  // Every draw happens regardless of the spec so one stream layout serves all specs.
  const bool fh = rng.coin(), fv = rng.coin();
  t.flip_h = spec.horizontal_flip && fh;
  t.flip_v = spec.vertical_flip && fv;
  t.rotation_deg = rng.uniform(0.0, spec.rotation_max_deg);
  t.shear = rng.uniform(-spec.shear, spec.shear);
  t.zoom = rng.uniform(1.0 - spec.zoom, 1.0 + spec.zoom);
  t.shift_x = rng.uniform(-spec.width_shift, spec.width_shift) * static_cast<double>(width);
  t.shift_y = rng.uniform(-spec.height_shift, spec.height_shift) * static_cast<double>(height);
  return t;
}

namespace {

// Half-sample symmetric: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
Index reflect(Index i, Index n) {
  const Index period = 2 * n;
  Index m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

Image apply_affine(const Image& img, const AffineSample& t) {
  if (img.empty()) throw InvalidArgument("augment: empty image");
  // Forward map on centred coordinates: p' = Z * S * R * F * p + shift.
  const double th = t.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double fx = t.flip_h ? -1.0 : 1.0, fy = t.flip_v ? -1.0 : 1.0;
  // R*F
  double a00 = c * fx, a01 = -s * fy, a10 = s * fx, a11 = c * fy;
  // S = [[1, k], [0, 1]]
  a00 += t.shear * a10;
  a01 += t.shear * a11;
  a00 *= t.zoom;
  a01 *= t.zoom;
  a10 *= t.zoom;
  a11 *= t.zoom;
  const double det = a00 * a11 - a01 * a10;
  if (std::abs(det) < 1e-12) throw InvalidArgument("augment: degenerate transform");
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
  const double cx = 0.5 * static_cast<double>(img.width - 1), cy = 0.5 * static_cast<double>(img.height - 1);

  Image out(img.height, img.width);
  for (Index y = 0; y < img.height; ++y) {
    for (Index x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - cx - t.shift_x;
      const double dy = static_cast<double>(y) - cy - t.shift_y;
      const double sx = i00 * dx + i01 * dy + cx;
      const double sy = i10 * dx + i11 * dy + cy;
      const double flx = std::floor(sx), fly = std::floor(sy);
      const double wx = sx - flx, wy = sy - fly;
      const auto x0 = static_cast<Index>(flx), y0 = static_cast<Index>(fly);
      const Index xa = reflect(x0, img.width), xb = reflect(x0 + 1, img.width);
      const Index ya = reflect(y0, img.height), yb = reflect(y0 + 1, img.height);
      for (int ch = 0; ch < 3; ++ch) {
        if (wx == 0.0 && wy == 0.0) {
          out.at(y, x, ch) = img.at(ya, xa, ch);
          continue;
        }
        const double top = img.at(ya, xa, ch) * (1.0 - wx) + img.at(ya, xb, ch) * wx;
        const double bottom = img.at(yb, xa, ch) * (1.0 - wx) + img.at(yb, xb, ch) * wx;
        out.at(y, x, ch) = to_u8(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Image augment(const Image& img, const AugmentationSpec& spec, std::uint64_t image_key, int copy_index) {
  return apply_affine(img, sample_augmentation(spec, img.height, img.width, image_key, copy_index));
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.height, img.width);
  for (Index y = 0; y < img.height; ++y)
    std::copy_n(img.pixels.begin() + (img.height - 1 - y) * img.width * 3, img.width * 3,
                out.pixels.begin() + y * img.width * 3);
  return out;
}

void normalize_into(const Image& img, std::span<float> dst) {
  if (dst.size() != img.pixels.size()) throw InvalidShape("normalize: destination size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(img.pixels[i]) / 255.0f;
}

Tensor<float> normalize(const Image& img) {
  Tensor<float> t(Shape{img.height, img.width, 3});
  normalize_into(img, t.data());
  return t;
}

}  // namespace flood
