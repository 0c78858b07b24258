#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fcf/image.hpp"
#include "fcf/random.hpp"

namespace fcf {

struct DatasetItem {
  Image image;  // H x W x 3
  int64_t pid = 0;
  int64_t cam = 0;
  int64_t idx = 0;  // per-(split, pid) counter; part of the file name
};

struct ToyDataset {
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> query;    // optionally pre-occluded
  std::vector<DatasetItem> gallery;  // holistic
  int64_t n_ids = 0;
  int64_t n_cams = 0;
  int64_t img_h = 0, img_w = 0;
};

struct DataConfig {
  uint64_t seed = 3;
  int64_t n_ids = 8;
  int64_t imgs_per_id = 8;  // train split
  int64_t n_cams = 2;
  int64_t query_per_id = 2;
  int64_t gallery_per_id = 2;
  bool occlude_queries = true;
  int64_t img_h = 64, img_w = 32;

  void validate() const;
};

/// Deterministic renders of synthetic persons. Identity appearance (colors,
/// proportions, texture) is a function of (seed, pid); per-image jitter of
/// (seed, pid, idx) — shared across cameras; cameras differ photometrically
/// only. Train/query/gallery use disjoint idx ranges; queries sit on camera
/// 0 and gallery on camera 1 so the same-pid-same-cam exclusion never
/// removes the correct match.
ToyDataset generate_dataset(const DataConfig& cfg);

/// One rendered person plus its body silhouette (camera-independent).
struct RenderedPerson {
  Image image;
  Image silhouette;  // H x W x 1, 255 on body pixels
};
RenderedPerson render_toy_person(uint64_t seed, int64_t pid, int64_t idx,
                                 int64_t cam, int64_t h, int64_t w);

/// Writes `<split>/<pid>_<cam>_<idx>.png` plus `manifest.json`.
void write_dataset(const ToyDataset& data, const std::filesystem::path& root);
ToyDataset load_dataset(const std::filesystem::path& root);

/// PK batch sampler: every batch holds exactly P identities with K images
/// each; one epoch covers every pid at least once. Returns index lists into
/// `items`.
std::vector<std::vector<size_t>> pk_batches(
    const std::vector<DatasetItem>& items, int64_t p, int64_t k, Rng& rng);

}  // namespace fcf
