#include "fcf/oia.hpp"

#include <algorithm>
#include <cmath>

namespace fcf {

double AugmentedPair::mask_fraction() const {
  int64_t on = 0;
  for (uint8_t v : occ_mask.px) on += v == 255 ? 1 : 0;
  return static_cast<double>(on) /
         static_cast<double>(occ_mask.h * occ_mask.w);
}

Image scale_occluder(const OcclusionInstance& inst, int64_t img_h,
                     int64_t img_w, double delta) {
  if (!(delta > 0.0 && delta < 1.0))
    throw ValueError("scale_occluder: delta must lie in (0, 1)");
  const int64_t ho = inst.pixels.h, wo = inst.pixels.w;
  if (ho < 1 || wo < 1) throw ValueError("scale_occluder: empty occluder");

  const double eps = delta * static_cast<double>(img_h * img_w) /
                     static_cast<double>(ho * wo);
  const double s = std::sqrt(eps);
  const int64_t nh = std::clamp<int64_t>(
      static_cast<int64_t>(std::lround(s * static_cast<double>(ho))), 1,
      img_h);
  const int64_t nw = std::clamp<int64_t>(
      static_cast<int64_t>(std::lround(s * static_cast<double>(wo))), 1,
      img_w);
  if (nh == ho && nw == wo) return inst.pixels;

  Image rgb = resize_bilinear(take_channels(inst.pixels, {0, 1, 2}), nh, nw);
  Image alpha = resize_nearest(take_channels(inst.pixels, {3}), nh, nw);
  Image out(nh, nw, 4);
  for (int64_t y = 0; y < nh; ++y)
    for (int64_t x = 0; x < nw; ++x) {
      out.at(y, x, 0) = rgb.at(y, x, 0);
      out.at(y, x, 1) = rgb.at(y, x, 1);
      out.at(y, x, 2) = rgb.at(y, x, 2);
      out.at(y, x, 3) = alpha.at(y, x, 0);
    }
  return out;
}

namespace {

PlacedOcclusion paste_at(const Image& img, const Image& occ, int64_t top,
                         int64_t left) {
  PlacedOcclusion out{img, Image(img.h, img.w, 1, 0), top, left};
  for (int64_t y = 0; y < occ.h; ++y)
    for (int64_t x = 0; x < occ.w; ++x) {
      if (occ.at(y, x, 3) != 255) continue;
      out.occluded.at(top + y, left + x, 0) = occ.at(y, x, 0);
      out.occluded.at(top + y, left + x, 1) = occ.at(y, x, 1);
      out.occluded.at(top + y, left + x, 2) = occ.at(y, x, 2);
      out.mask.at(top + y, left + x, 0) = 255;
    }
  return out;
}

}  // namespace

PlacedOcclusion place_occluder(const Image& img, const Image& occ,
                               Prior prior, Rng& rng) {
  if (img.ch != 3) throw ValueError("place_occluder: image must be RGB");
  if (occ.ch != 4) throw ValueError("place_occluder: occluder must be RGBA");
  if (occ.h > img.h || occ.w > img.w)
    throw ValueError("place_occluder: occluder larger than image");

  const int64_t top = prior == Prior::Strong
                          ? img.h - occ.h  // bottom edge flush with the frame
                          : rng.uniform_int(img.h - occ.h + 1);
  const int64_t left = rng.uniform_int(img.w - occ.w + 1);
  return paste_at(img, occ, top, left);
}

std::vector<AugmentedPair> augment_batch(const std::vector<BatchItem>& batch,
                                         const Library& lib, Rng& rng,
                                         PlacementMode mode, double delta_lo,
                                         double delta_hi) {
  if (batch.empty()) throw ValueError("augment_batch: empty batch");
  if (lib.size() == 0) throw ValueError("augment_batch: empty occlusion library");
  if (!(delta_lo > 0.0 && delta_hi < 1.0 && delta_lo <= delta_hi))
    throw ValueError("augment_batch: delta range must satisfy 0 < lo <= hi < 1");

  double fixed_u = 0.0, fixed_v = 0.0;
  if (mode == PlacementMode::Fixed) {
    fixed_u = rng.uniform();
    fixed_v = rng.uniform();
  }

  std::vector<AugmentedPair> out;
  out.reserve(batch.size());
  for (const auto& item : batch) {
    if (item.image.ch != 3)
      throw ValueError("augment_batch: images must be RGB");
    const OcclusionInstance& inst = lib.sample_any(rng);
    const double delta = delta_lo == delta_hi
                             ? delta_lo
                             : rng.uniform(delta_lo, delta_hi);
    Image occ = scale_occluder(inst, item.image.h, item.image.w, delta);

    PlacedOcclusion placed;
    if (mode == PlacementMode::Fixed) {
      // Shared position fractions mapped onto this occluder's valid range;
      // strong priors stay bottom-flush.
      const int64_t top =
          inst.prior == Prior::Strong
              ? item.image.h - occ.h
              : static_cast<int64_t>(std::lround(
                    fixed_v * static_cast<double>(item.image.h - occ.h)));
      const int64_t left = static_cast<int64_t>(
          std::lround(fixed_u * static_cast<double>(item.image.w - occ.w)));
      placed = paste_at(item.image, occ, top, left);
    } else {
      placed = place_occluder(item.image, occ, inst.prior, rng);
    }

    AugmentedPair pair;
    pair.holistic = item.image;
    pair.occluded = std::move(placed.occluded);
    pair.occ_mask = std::move(placed.mask);
    pair.pid = item.pid;
    pair.cam = item.cam;
    pair.paste_top = placed.top;
    pair.paste_left = placed.left;
    pair.paste_h = occ.h;
    pair.paste_w = occ.w;
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace fcf
