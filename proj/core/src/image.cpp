#include "fcf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fcf {

Image read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw IoError("cannot decode PNG " + path.string() + ": " + pi.message);
  pi.format = PNG_FORMAT_RGBA;
  Image out(pi.height, pi.width, 4);
  if (!png_image_finish_read(&pi, nullptr, out.px.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError("cannot decode PNG " + path.string() + ": " + pi.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.w);
  pi.height = static_cast<png_uint_32>(img.h);
  switch (img.ch) {
    case 1: pi.format = PNG_FORMAT_GRAY; break;
    case 3: pi.format = PNG_FORMAT_RGB; break;
    case 4: pi.format = PNG_FORMAT_RGBA; break;
    default:
      throw ValueError("write_png: unsupported channel count " +
                       std::to_string(img.ch));
  }
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, img.px.data(), 0,
                               nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + pi.message);
}

Image resize_bilinear(const Image& img, int64_t nh, int64_t nw) {
  Image out(nh, nw, img.ch);
  const double sy = static_cast<double>(img.h) / static_cast<double>(nh);
  const double sx = static_cast<double>(img.w) / static_cast<double>(nw);
  for (int64_t y = 0; y < nh; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.h - 1));
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < nw; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.w - 1));
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int64_t c = 0; c < img.ch; ++c) {
        const double v =
            (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
            wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
        out.at(y, x, c) = static_cast<uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

Image resize_nearest(const Image& img, int64_t nh, int64_t nw) {
  Image out(nh, nw, img.ch);
  const double sy = static_cast<double>(img.h) / static_cast<double>(nh);
  const double sx = static_cast<double>(img.w) / static_cast<double>(nw);
  for (int64_t y = 0; y < nh; ++y) {
    int64_t ys = std::min<int64_t>(
        img.h - 1, static_cast<int64_t>((static_cast<double>(y) + 0.5) * sy));
    for (int64_t x = 0; x < nw; ++x) {
      int64_t xs = std::min<int64_t>(
          img.w - 1,
          static_cast<int64_t>((static_cast<double>(x) + 0.5) * sx));
      for (int64_t c = 0; c < img.ch; ++c) out.at(y, x, c) = img.at(ys, xs, c);
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.h, img.w, img.ch);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t c = 0; c < img.ch; ++c)
        out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return out;
}

Image take_channels(const Image& img, const std::vector<int64_t>& channels) {
  Image out(img.h, img.w, static_cast<int64_t>(channels.size()));
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (size_t c = 0; c < channels.size(); ++c)
        out.at(y, x, static_cast<int64_t>(c)) = img.at(y, x, channels[c]);
  return out;
}

}  // namespace fcf
