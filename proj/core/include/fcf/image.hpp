#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fcf/errors.hpp"

namespace fcf {

/// Interleaved row-major 8-bit image; ch is 1 (gray), 3 (RGB) or 4 (RGBA).
struct Image {
  int64_t h = 0, w = 0, ch = 0;
  std::vector<uint8_t> px;

  Image() = default;
  Image(int64_t h, int64_t w, int64_t ch, uint8_t fill = 0)
      : h(h), w(w), ch(ch),
        px(static_cast<size_t>(h * w * ch), fill) {}

  uint8_t& at(int64_t y, int64_t x, int64_t c) {
    return px[static_cast<size_t>((y * w + x) * ch + c)];
  }
  uint8_t at(int64_t y, int64_t x, int64_t c) const {
    return px[static_cast<size_t>((y * w + x) * ch + c)];
  }
  bool same_extent(const Image& o) const {
    return h == o.h && w == o.w && ch == o.ch;
  }
};

/// Decodes a PNG as RGBA (channels expanded as needed).
Image read_png(const std::filesystem::path& path);

/// Encodes gray/RGB/RGBA depending on img.ch.
void write_png(const std::filesystem::path& path, const Image& img);

/// Pixel-center convention: src = (dst + 0.5) * scale - 0.5, clamped.
Image resize_bilinear(const Image& img, int64_t nh, int64_t nw);
Image resize_nearest(const Image& img, int64_t nh, int64_t nw);

Image flip_horizontal(const Image& img);

/// Keeps the listed channels, e.g. {0,1,2} to drop alpha.
Image take_channels(const Image& img, const std::vector<int64_t>& channels);

}  // namespace fcf
