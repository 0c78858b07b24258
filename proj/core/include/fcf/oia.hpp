#pragma once

#include <tuple>
#include <vector>

#include "fcf/image.hpp"
#include "fcf/oil.hpp"
#include "fcf/random.hpp"

namespace fcf {

/// One training sample after occlusion augmentation. holistic and occluded
/// differ exactly on occ_mask == 255 pixels; outside the mask they are
/// bit-identical.
struct AugmentedPair {
  Image holistic;  // H x W x 3
  Image occluded;  // H x W x 3
  Image occ_mask;  // H x W x 1, values {0, 255}
  int64_t pid = 0;
  int64_t cam = 0;
  // Paste rectangle of the occluder's bounding box (mask footprint lies
  // inside it; strong priors have paste_top + paste_h == H).
  int64_t paste_top = 0, paste_left = 0, paste_h = 0, paste_w = 0;

  double mask_fraction() const;
};

/// Scales an occluder so its bounding-box area becomes delta * (H*W): both
/// dimensions shrink/grow by sqrt(delta*H*W / (h_o*w_o)), clamped to fit the
/// frame. RGB is resampled bilinearly, the alpha mask nearest-neighbor (it
/// must stay binary).
Image scale_occluder(const OcclusionInstance& inst, int64_t img_h,
                     int64_t img_w, double delta);

struct PlacedOcclusion {
  Image occluded;  // H x W x 3
  Image mask;      // H x W x 1
  int64_t top = 0, left = 0;
};

/// Pastes a scaled RGBA occluder. Strong prior: bottom edge flush with the
/// image frame, horizontal position uniform. Weak prior: both coordinates
/// uniform (vertical drawn first). Compositing is exact per-pixel
/// replacement under the binary alpha; no blending.
PlacedOcclusion place_occluder(const Image& img, const Image& occ,
                               Prior prior, Rng& rng);

enum class PlacementMode {
  Random,  // every instance draws its own position (default, stronger)
  Fixed,   // one position fraction drawn per batch, shared by all instances
};

struct BatchItem {
  Image image;  // H x W x 3
  int64_t pid = 0;
  int64_t cam = 0;
};

/// Per-instance occluder draw + delta ~ U(delta_lo, delta_hi) + placement.
/// Order, pids and cams are preserved.
std::vector<AugmentedPair> augment_batch(const std::vector<BatchItem>& batch,
                                         const Library& lib, Rng& rng,
                                         PlacementMode mode = PlacementMode::Random,
                                         double delta_lo = 0.1,
                                         double delta_hi = 0.7);

}  // namespace fcf
