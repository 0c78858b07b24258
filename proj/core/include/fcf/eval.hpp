#pragma once

#include <filesystem>

#include "fcf/data.hpp"
#include "fcf/model.hpp"

namespace fcf {

/// Row-major n x dim feature matrix with aligned pids/cams. Rows are
/// L2-normalized.
struct GalleryIndex {
  int64_t n = 0, dim = 0;
  std::vector<float> features;
  std::vector<int64_t> pids;
  std::vector<int64_t> cams;

  std::span<const float> row(int64_t i) const {
    return {features.data() + i * dim, static_cast<size_t>(dim)};
  }
};

struct ExtractOptions {
  int64_t batch_size = 32;
  /// The holistic stream's part features are a training-time structure; a
  /// flag re-adds them to the descriptor for ablation.
  bool include_holistic_parts = false;
};

/// One shared-encoder pass per image; descriptor =
/// [global_bn | occluded parts_bn | completed parts_bn] (completion segment
/// present when the model has FCD), L2-normalized per row. The model must be
/// in eval mode.
GalleryIndex extract(FcfModel& model, const std::vector<DatasetItem>& items,
                     const ExtractOptions& opts = {});

struct RetrievalReport {
  std::vector<double> cmc;  // index k-1 = CMC@k, length = |gallery|
  double mAP = 0.0;
  int64_t excluded_queries = 0;

  double rank_at(int64_t k) const;
};

/// Cosine-distance ranking with the standard same-pid-same-cam gallery
/// exclusion. Queries with no valid positive are excluded and counted.
/// Ties break toward the lower gallery index.
RetrievalReport cmc_map(const GalleryIndex& query,
                        const GalleryIndex& gallery);

/// "FCF1" tensor container with a JSON sidecar carrying pids/cams.
void save_features(const std::filesystem::path& path, const GalleryIndex& gi);
GalleryIndex load_features(const std::filesystem::path& path);

/// Retrieval report as JSON {cmc: [...], mAP, excluded_queries}.
void write_report(const std::filesystem::path& path,
                  const RetrievalReport& report);

}  // namespace fcf
