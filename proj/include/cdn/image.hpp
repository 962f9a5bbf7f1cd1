// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_IMAGE_HPP
#define CDN_IMAGE_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cdn/core.hpp"

namespace cdn {

// 8-bit image, row-major HWC. The IO-side counterpart of a [0,1] tensor.
struct ImageBuffer {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t channels = 1;  // 1 (PGM) or 3 (PPM)
  std::vector<std::uint8_t> pixels;

  std::int64_t count() const { return width * height * channels; }
};

namespace detail {

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string next_token(const std::string& buf, std::size_t& pos, const std::string& path) {
  while (pos < buf.size()) {
    const char ch = buf[pos];
    if (ch == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  if (start == pos) throw DataError(path + ": truncated netpbm header");
  return buf.substr(start, pos - start);
}

inline std::int64_t parse_dim(const std::string& tok, const std::string& path) {
  for (char c : tok)
    if (c < '0' || c > '9') throw DataError(path + ": malformed header token '" + tok + "'");
  return std::stoll(tok);
}

}  // namespace detail

// Binary PGM (P5) and PPM (P6), maxval 255 only.
inline ImageBuffer load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const std::string magic = detail::next_token(buf, pos, path);
  ImageBuffer img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw DataError(path + ": unsupported format '" + magic + "' (binary P5/P6 only)");
  }
  img.width = detail::parse_dim(detail::next_token(buf, pos, path), path);
  img.height = detail::parse_dim(detail::next_token(buf, pos, path), path);
  const std::int64_t maxval = detail::parse_dim(detail::next_token(buf, pos, path), path);
  if (maxval != 255)
    throw DataError(path + ": unsupported maxval " + std::to_string(maxval) + " (must be 255)");
  if (img.width <= 0 || img.height <= 0) throw DataError(path + ": empty image");
  if (pos >= buf.size()) throw DataError(path + ": truncated payload");
  ++pos;  // single whitespace byte after maxval
  const std::size_t need = static_cast<std::size_t>(img.count());
  if (buf.size() - pos < need)
    throw DataError(path + ": truncated payload (" + std::to_string(buf.size() - pos) + " of " +
                    std::to_string(need) + " bytes)");
  img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                    buf.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline void save_image(const ImageBuffer& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw DataError("save_image: channels must be 1 or 3");
  if (static_cast<std::int64_t>(img.pixels.size()) != img.count())
    throw DataError("save_image: pixel count does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image file: " + path);
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("short write: " + path);
}

// HWC bytes -> (1, C, H, W) floats in [0,1].
template <class T = float>
TensorT<T> image_to_tensor(const ImageBuffer& img) {
  TensorT<T> t(Shape(1, img.channels, img.height, img.width));
  T* d = t.data();
  const T inv = T(1) / T(255);
  for (std::int64_t c = 0; c < img.channels; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        d[(c * img.height + y) * img.width + x] =
            static_cast<T>(img.pixels[static_cast<std::size_t>((y * img.width + x) * img.channels + c)]) * inv;
  return t;
}

// First batch element, clamped to [0,1] and rounded to 8 bits.
template <class T>
ImageBuffer tensor_to_image(const TensorT<T>& t) {
  const Shape s = t.shape();
  if (s.c != 1 && s.c != 3) throw ShapeError("tensor_to_image: needs 1 or 3 channels");
  ImageBuffer img;
  img.width = s.w;
  img.height = s.h;
  img.channels = s.c;
  img.pixels.resize(static_cast<std::size_t>(img.count()));
  const T* d = t.data();
  for (std::int64_t c = 0; c < s.c; ++c)
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        double v = static_cast<double>(d[(c * s.h + y) * s.w + x]);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        img.pixels[static_cast<std::size_t>((y * s.w + x) * s.c + c)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace cdn

#endif  // CDN_IMAGE_HPP
