#include "flood/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

namespace flood {

Image::Image(Index h, Index w, std::uint8_t fill) : height(h), width(w) {
  if (h < 1 || w < 1) throw InvalidShape("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(h * w * 3), fill);
}

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  std::size_t pos = kPngSignature.size();
  std::uint32_t width = 0, height = 0;
  int color_type = -1, channels = 0;
  bool seen_header = false, seen_end = false;
  std::vector<std::uint8_t> palette;
  std::vector<std::uint8_t> compressed;
  std::size_t idat_offset = 0;

  while (!seen_end) {
    if (pos + 8 > bytes.size()) throw DecodeError("PNG truncated before chunk header", pos);
    const std::uint32_t length = read_be32(bytes.data() + pos);
    const std::uint8_t* type = bytes.data() + pos + 4;
    const std::string tag(reinterpret_cast<const char*>(type), 4);
    if (length > 0x7fffffffu || pos + 12 + length > bytes.size()) {
      throw DecodeError("PNG chunk '" + tag + "' runs past end of stream", pos);
    }
    const std::uint8_t* data = type + 4;
    const std::uint32_t stored_crc = read_be32(data + length);
    const auto crc = static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), type, length + 4));
    if (crc != stored_crc) throw DecodeError("PNG chunk '" + tag + "' fails its CRC", pos);

    if (!seen_header && tag != "IHDR") throw DecodeError("PNG does not start with IHDR", pos);
    if (tag == "IHDR") {
      if (length != 13) throw DecodeError("PNG IHDR has wrong length", pos);
      width = read_be32(data);
      height = read_be32(data + 4);
      const int depth = data[8];
      color_type = data[9];
      if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16)) {
        throw DecodeError("PNG dimensions out of range", pos + 8);
      }
      if (data[10] != 0 || data[11] != 0) throw DecodeError("PNG uses unknown compression or filter method", pos + 18);
      if (data[12] != 0) throw UnsupportedFormat("interlaced PNG is not supported", pos + 20);
      if (depth != 8) {
        throw UnsupportedFormat("PNG bit depth " + std::to_string(depth) + " is not supported (8-bit only)", pos + 16);
      }
      switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 3: channels = 1; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: throw DecodeError("PNG color type " + std::to_string(color_type) + " is invalid", pos + 17);
      }
      seen_header = true;
    } else if (tag == "PLTE") {
      palette.assign(data, data + length);
    } else if (tag == "IDAT") {
      if (compressed.empty()) idat_offset = pos;
      compressed.insert(compressed.end(), data, data + length);
    } else if (tag == "IEND") {
      seen_end = true;
    } else if ((type[0] & 0x20) == 0) {
      throw UnsupportedFormat("PNG critical chunk '" + tag + "' is not supported", pos);
    }
    pos += 12 + length;
  }
  if (compressed.empty()) throw DecodeError("PNG has no image data", pos);
  if (color_type == 3 && palette.size() < 3) throw DecodeError("palette PNG without PLTE", idat_offset);

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * height);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DecodeError("zlib initialization failed", idat_offset);
  zs.next_in = compressed.data();
  zs.avail_in = static_cast<uInt>(compressed.size());
  zs.next_out = raw.data();
  zs.avail_out = static_cast<uInt>(raw.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = raw.size() - zs.avail_out;
  const std::size_t consumed = compressed.size() - zs.avail_in;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != raw.size()) {
    throw DecodeError(produced < raw.size() ? "PNG image data is truncated" : "PNG image data is corrupt",
                      idat_offset + 8 + consumed);
  }

  std::vector<std::uint8_t> prev(stride, 0), cur(stride);
  Image img(height, width);
  const int bpp = channels;
  for (std::uint32_t y = 0; y < height; ++y) {
    const std::uint8_t* line = raw.data() + y * (stride + 1);
    const int filter = line[0];
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      int v = line[1 + i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw DecodeError("PNG row " + std::to_string(y) + " has unknown filter type", idat_offset);
      }
      cur[i] = static_cast<std::uint8_t>(v);
    }
    for (std::uint32_t x = 0; x < width; ++x) {
      const std::uint8_t* px = cur.data() + static_cast<std::size_t>(x) * channels;
      std::uint8_t rgb[3];
      if (color_type == 3) {
        const std::size_t k = std::size_t{px[0]} * 3;
        if (k + 2 >= palette.size()) throw DecodeError("PNG palette index out of range", idat_offset);
        rgb[0] = palette[k];
        rgb[1] = palette[k + 1];
        rgb[2] = palette[k + 2];
      } else if (channels <= 2) {
        rgb[0] = rgb[1] = rgb[2] = px[0];
      } else {
        rgb[0] = px[0];
        rgb[1] = px[1];
        rgb[2] = px[2];
      }
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
    }
    std::swap(prev, cur);
  }
  return img;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 20)) throw DecodeError(std::string("PPM ") + what + " is too large", start);
      ++pos;
    }
    if (pos == start) throw DecodeError(std::string("PPM header is missing the ") + what, start);
    return v;
  };
  const long w = number("width");
  const long h = number("height");
  const std::size_t maxval_at = pos;
  const long maxval = number("maxval");
  if (w < 1 || h < 1) throw DecodeError("PPM dimensions must be positive", maxval_at);
  if (maxval != 255) throw UnsupportedFormat("PPM maxval " + std::to_string(maxval) + " is not supported", maxval_at);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw DecodeError("PPM header not terminated", pos);
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) throw DecodeError("PPM pixel data is truncated", bytes.size());
  Image img(h, w);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, img.pixels.begin());
  return img;
}

}  // namespace

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= kPngSignature.size() && std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    return ImageFormat::png;
  }
  if (bytes.size() >= 3 && bytes[0] == 'P' && bytes[1] == '6' && std::isspace(bytes[2])) return ImageFormat::ppm;
  return ImageFormat::unknown;
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::png: return decode_png(bytes);
    case ImageFormat::ppm: return decode_ppm(bytes);
    case ImageFormat::unknown: break;
  }
  throw UnsupportedFormat("unrecognized image format (expected PNG or binary PPM)", 0);
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw InvalidArgument("cannot encode an empty image");
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (Index y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * stride),
               img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error("zlib compression failed");
  }
  z.resize(zlen);

  std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());
  auto chunk = [&](const char* tag, const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), tag, tag + 4);
    out.insert(out.end(), data.begin(), data.end());
    put_be32(out, static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), out.data() + start,
                                                   static_cast<uInt>(data.size() + 4))));
  };
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  chunk("IHDR", ihdr);
  chunk("IDAT", z);
  chunk("IEND", {});
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  if (img.empty()) throw InvalidArgument("cannot encode an empty image");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const UnsupportedFormat& e) {
    throw UnsupportedFormat(path.string() + ": " + e.detail(), e.offset());
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.detail(), e.offset());
  }
}

void write_image(const std::filesystem::path& path, const Image& img) {
  if (path.extension() == ".ppm") {
    write_file(path, encode_ppm(img));
  } else {
    write_file(path, encode_png(img));
  }
}

}  // namespace flood
