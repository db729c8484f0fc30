#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flood/tensor.hpp"

namespace flood {

// 8-bit RGB, row-major, interleaved.
struct Image {
  Index height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(Index h, Index w, std::uint8_t fill = 0);

  std::uint8_t& at(Index y, Index x, int c) { return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  std::uint8_t at(Index y, Index x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class ImageFormat { unknown, png, ppm };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

// PNG (8-bit gray, gray+alpha, RGB, RGBA or palette; non-interlaced; alpha is
// dropped) or binary PPM P6 with maxval 255. Failures throw DecodeError with
// the byte offset; valid but unhandled variants throw UnsupportedFormat.
Image decode_image(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const Image& img);
std::vector<std::uint8_t> encode_ppm(const Image& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Decode errors are rethrown with the path prepended.
Image read_image(const std::filesystem::path& path);
// Format chosen by extension (.ppm, otherwise PNG).
void write_image(const std::filesystem::path& path, const Image& img);

}  // namespace flood
