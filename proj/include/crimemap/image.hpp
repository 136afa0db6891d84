#pragma once

// 8-bit raster buffers plus PNG encode/decode (libpng simplified API) and
// bilinear resampling.

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "crimemap/common.hpp"

namespace crimemap {

// Row-major interleaved 8-bit image; channels is 3 (RGB) or 4 (RGBA).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<uint8_t> pixels;

  static Image make(int w, int h, int c, uint8_t fill = 0) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.pixels.assign(static_cast<size_t>(w) * h * c, fill);
    return img;
  }

  uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * channels;
  }
  const uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * channels;
  }

  bool operator==(const Image&) const = default;
};

inline std::vector<uint8_t> encode_png(const Image& img) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode (size): ") + pi.message);
  std::vector<uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode: ") + pi.message);
  out.resize(size);
  return out;
}

inline Image decode_png(const uint8_t* data, size_t size, int want_channels = 0) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, data, size))
    throw IoError(std::string("png decode: ") + pi.message);
  int channels = want_channels ? want_channels : (pi.format & PNG_FORMAT_FLAG_ALPHA ? 4 : 3);
  pi.format = channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  Image img = Image::make(static_cast<int>(pi.width), static_cast<int>(pi.height), channels);
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png decode: ") + pi.message);
  return img;
}

inline Image decode_png(const std::vector<uint8_t>& data, int want_channels = 0) {
  return decode_png(data.data(), data.size(), want_channels);
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  auto bytes = encode_png(img);
  std::filesystem::create_directories(path.parent_path());
  // Write to a sibling temp file then rename, so partial writes never land
  // under the final name.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw IoError("cannot open " + tmp.string());
    size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (n != bytes.size()) throw IoError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Image read_png(const std::filesystem::path& path, int want_channels = 0) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::fseek(f, 0, SEEK_END);
  long len = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> bytes(static_cast<size_t>(len));
  size_t n = std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw IoError("short read: " + path.string());
  return decode_png(bytes, want_channels);
}

// Bilinear resample to (out_w, out_h); edge-clamped, channel count preserved.
inline Image resize_bilinear(const Image& src, int out_w, int out_h) {
  Image dst = Image::make(out_w, out_h, src.channels);
  double sx = static_cast<double>(src.width) / out_w;
  double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, src.height - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, src.width - 1);
      x0 = std::max(x0, 0);
      const uint8_t* p00 = src.at(x0, y0);
      const uint8_t* p10 = src.at(x1, y0);
      const uint8_t* p01 = src.at(x0, y1);
      const uint8_t* p11 = src.at(x1, y1);
      uint8_t* out = dst.at(x, y);
      for (int c = 0; c < src.channels; ++c) {
        double v = (1 - wy) * ((1 - wx) * p00[c] + wx * p10[c]) +
                   wy * ((1 - wx) * p01[c] + wx * p11[c]);
        out[c] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return dst;
}

}  // namespace crimemap
