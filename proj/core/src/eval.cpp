#include "fcf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fcf/checkpoint.hpp"

namespace fcf {

GalleryIndex extract(FcfModel& model, const std::vector<DatasetItem>& items,
                     const ExtractOptions& opts) {
  if (model.training())
    throw ValueError("extract: model is in training mode (BNNeck needs "
                     "running statistics)");
  if (items.empty()) throw ValueError("extract: empty item list");

  const auto& cfg = model.config();
  const int64_t c = cfg.encoder.dim;
  const int64_t m = cfg.encoder.m_parts;
  int64_t dim = c + m * c;                       // global + occluded parts
  if (cfg.use_fcd) dim += m * c;                 // completion parts
  if (opts.include_holistic_parts) dim += m * c;

  GalleryIndex out;
  out.n = static_cast<int64_t>(items.size());
  out.dim = dim;
  out.features.reserve(static_cast<size_t>(out.n * dim));

  NoGradGuard ng;
  for (int64_t begin = 0; begin < out.n; begin += opts.batch_size) {
    const int64_t end = std::min(out.n, begin + opts.batch_size);
    std::vector<Image> images;
    std::vector<int64_t> cams;
    for (int64_t i = begin; i < end; ++i) {
      images.push_back(items[static_cast<size_t>(i)].image);
      cams.push_back(items[static_cast<size_t>(i)].cam);
    }
    auto fwd = model.forward_eval(images, cams);
    const int64_t b = end - begin;
    auto append = [&](const Tensor& t, int64_t row, int64_t count) {
      auto d = t.data();
      out.features.insert(out.features.end(), d.begin() + row * count,
                          d.begin() + (row + 1) * count);
    };
    for (int64_t r = 0; r < b; ++r) {
      append(fwd.occluded.global_bn, r, c);
      append(fwd.occluded.parts_bn, r, m * c);
      if (cfg.use_fcd) append(fwd.completed.parts_bn, r, m * c);
      if (opts.include_holistic_parts) append(fwd.holistic.parts_bn, r, m * c);
    }
  }

  for (const auto& item : items) {
    out.pids.push_back(item.pid);
    out.cams.push_back(item.cam);
  }

  // L2-normalize rows; cosine ranking then reduces to a dot product.
  for (int64_t i = 0; i < out.n; ++i) {
    float* row = out.features.data() + i * dim;
    double norm = 0.0;
    for (int64_t j = 0; j < dim; ++j)
      norm += static_cast<double>(row[j]) * row[j];
    const float inv = norm > 0 ? static_cast<float>(1.0 / std::sqrt(norm))
                               : 0.0f;
    for (int64_t j = 0; j < dim; ++j) row[j] *= inv;
  }
  return out;
}

double RetrievalReport::rank_at(int64_t k) const {
  if (k < 1 || static_cast<size_t>(k) > cmc.size())
    throw ValueError("rank_at: k out of range");
  return cmc[static_cast<size_t>(k - 1)];
}

RetrievalReport cmc_map(const GalleryIndex& query,
                        const GalleryIndex& gallery) {
  if (query.dim != gallery.dim)
    throw ShapeError("cmc_map: feature dimension mismatch");
  if (gallery.n == 0 || query.n == 0)
    throw ValueError("cmc_map: empty query or gallery");

  RetrievalReport report;
  report.cmc.assign(static_cast<size_t>(gallery.n), 0.0);
  double ap_sum = 0.0;
  int64_t used_queries = 0;

  // True cosine distance (norms divided out), so ranking is invariant to
  // any positive rescaling of the features.
  auto row_norm = [](const GalleryIndex& gi, int64_t i) {
    auto r = gi.row(i);
    double acc = 0.0;
    for (float v : r) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
  };
  std::vector<double> gnorm(static_cast<size_t>(gallery.n));
  for (int64_t gi = 0; gi < gallery.n; ++gi) gnorm[gi] = row_norm(gallery, gi);

  std::vector<std::pair<float, int64_t>> order;  // (distance, gallery idx)
  for (int64_t qi = 0; qi < query.n; ++qi) {
    auto q = query.row(qi);
    const double qnorm = row_norm(query, qi);
    order.clear();
    int64_t relevant = 0;
    for (int64_t gi = 0; gi < gallery.n; ++gi) {
      // standard protocol: drop gallery entries sharing pid AND camera
      if (gallery.pids[static_cast<size_t>(gi)] ==
              query.pids[static_cast<size_t>(qi)] &&
          gallery.cams[static_cast<size_t>(gi)] ==
              query.cams[static_cast<size_t>(qi)])
        continue;
      auto g = gallery.row(gi);
      double dot = 0.0;
      for (int64_t j = 0; j < gallery.dim; ++j) dot += q[j] * g[j];
      const double denom = qnorm * gnorm[static_cast<size_t>(gi)];
      order.emplace_back(
          static_cast<float>(1.0 - (denom > 0 ? dot / denom : 0.0)), gi);
      if (gallery.pids[static_cast<size_t>(gi)] ==
          query.pids[static_cast<size_t>(qi)])
        ++relevant;
    }
    if (relevant == 0) {
      ++report.excluded_queries;
      continue;
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first < b.first;
                       return a.second < b.second;
                     });

    ++used_queries;
    int64_t hits = 0;
    double ap = 0.0;
    int64_t first_hit = -1;
    for (size_t rank = 0; rank < order.size(); ++rank) {
      const int64_t gi = order[rank].second;
      if (gallery.pids[static_cast<size_t>(gi)] ==
          query.pids[static_cast<size_t>(qi)]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        if (first_hit < 0) first_hit = static_cast<int64_t>(rank);
      }
    }
    ap /= static_cast<double>(relevant);
    ap_sum += ap;
    for (size_t k = static_cast<size_t>(first_hit); k < report.cmc.size();
         ++k)
      report.cmc[k] += 1.0;
  }

  if (used_queries == 0)
    throw ValueError("cmc_map: every query lost all matches to the "
                     "same-pid-same-cam exclusion");
  for (auto& v : report.cmc) v /= static_cast<double>(used_queries);
  report.mAP = ap_sum / static_cast<double>(used_queries);
  return report;
}

void save_features(const std::filesystem::path& path,
                   const GalleryIndex& gi) {
  save_tensors(path, {{"features", Tensor::from_data(
                                       {gi.n, gi.dim},
                                       std::vector<float>(gi.features))}});
  nlohmann::json side;
  side["pids"] = gi.pids;
  side["cams"] = gi.cams;
  auto sidecar = path;
  sidecar += ".json";
  std::ofstream os(sidecar);
  if (!os) throw IoError("cannot write " + sidecar.string());
  os << side.dump() << "\n";
}

GalleryIndex load_features(const std::filesystem::path& path) {
  auto tensors = load_tensors(path);
  auto it = tensors.find("features");
  if (it == tensors.end())
    throw IoError("feature dump lacks 'features': " + path.string());
  GalleryIndex gi;
  gi.n = it->second.extent(0);
  gi.dim = it->second.extent(1);
  auto d = it->second.data();
  gi.features.assign(d.begin(), d.end());

  auto sidecar = path;
  sidecar += ".json";
  std::ifstream is(sidecar);
  if (!is) throw IoError("cannot open " + sidecar.string());
  nlohmann::json side = nlohmann::json::parse(is);
  gi.pids = side.at("pids").get<std::vector<int64_t>>();
  gi.cams = side.at("cams").get<std::vector<int64_t>>();
  if (static_cast<int64_t>(gi.pids.size()) != gi.n)
    throw IoError("sidecar pid count mismatch: " + sidecar.string());
  return gi;
}

void write_report(const std::filesystem::path& path,
                  const RetrievalReport& report) {
  nlohmann::json doc;
  doc["cmc"] = report.cmc;
  doc["mAP"] = report.mAP;
  doc["excluded_queries"] = report.excluded_queries;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << doc.dump(2) << "\n";
}

}  // namespace fcf
