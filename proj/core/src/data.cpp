#include "fcf/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "fcf/oia.hpp"

namespace fcf {

void DataConfig::validate() const {
  std::vector<std::string> errs;
  if (n_ids < 2) errs.push_back("n_ids must be >= 2");
  if (imgs_per_id < 1) errs.push_back("imgs_per_id must be >= 1");
  if (n_cams < 1) errs.push_back("n_cams must be >= 1");
  if (img_h < 16 || img_w < 16) errs.push_back("images must be >= 16x16");
  if (!errs.empty()) {
    std::string all = "data config invalid:";
    for (const auto& e : errs) all += "\n  - " + e;
    throw ValueError(all);
  }
}

namespace {

struct IdentityLook {
  uint8_t head[3], torso[3], torso_alt[3], legs[3];
  double head_r;     // head radius as a fraction of width
  double torso_w;    // torso width fraction
  double torso_top;  // torso top as a fraction of height
  double legs_top;   // legs top fraction
  int64_t stripe;    // torso texture period
  bool striped_vertical;
};

IdentityLook look_of(uint64_t seed, int64_t pid) {
  Rng rng(derive_seed(seed, 0x706964ULL, static_cast<uint64_t>(pid)));
  IdentityLook look;
  auto color = [&](uint8_t* c) {
    c[0] = static_cast<uint8_t>(30 + rng.uniform_int(200));
    c[1] = static_cast<uint8_t>(30 + rng.uniform_int(200));
    c[2] = static_cast<uint8_t>(30 + rng.uniform_int(200));
  };
  color(look.head);
  color(look.torso);
  color(look.torso_alt);
  color(look.legs);
  look.head_r = rng.uniform(0.14, 0.22);
  look.torso_w = rng.uniform(0.45, 0.75);
  look.torso_top = rng.uniform(0.20, 0.28);
  look.legs_top = rng.uniform(0.55, 0.65);
  look.stripe = 2 + rng.uniform_int(5);
  look.striped_vertical = rng.bernoulli(0.5);
  return look;
}

struct CameraTone {
  double gain[3];
  double offset[3];
};

CameraTone tone_of(uint64_t seed, int64_t cam) {
  Rng rng(derive_seed(seed, 0x63616dULL, static_cast<uint64_t>(cam)));
  CameraTone tone;
  for (int c = 0; c < 3; ++c) {
    tone.gain[c] = rng.uniform(0.75, 1.25);
    tone.offset[c] = rng.uniform(-18.0, 18.0);
  }
  return tone;
}

uint8_t clamp_px(double v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

}  // namespace

RenderedPerson render_toy_person(uint64_t seed, int64_t pid, int64_t idx,
                                 int64_t cam, int64_t h, int64_t w) {
  const IdentityLook look = look_of(seed, pid);
  // Per-image jitter; shared across cameras so geometry matches.
  Rng geo(derive_seed(seed, 0x67656fULL,
                      static_cast<uint64_t>(pid) * 100003ULL +
                          static_cast<uint64_t>(idx)));
  const int64_t dx = geo.uniform_int(5) - 2;
  const int64_t dy = geo.uniform_int(3) - 1;
  const double squeeze = geo.uniform(0.92, 1.08);

  // Background: two-color vertical gradient with hash noise.
  Rng bg(derive_seed(seed, 0x6267ULL,
                     static_cast<uint64_t>(pid) * 100003ULL +
                         static_cast<uint64_t>(idx)));
  uint8_t bg_a[3], bg_b[3];
  for (int c = 0; c < 3; ++c) {
    bg_a[c] = static_cast<uint8_t>(120 + bg.uniform_int(100));
    bg_b[c] = static_cast<uint8_t>(40 + bg.uniform_int(80));
  }

  RenderedPerson out;
  out.image = Image(h, w, 3);
  out.silhouette = Image(h, w, 1, 0);

  const double cx = w / 2.0 + dx;
  const double head_cy = h * 0.13 + dy;
  const double head_r = look.head_r * w * squeeze;
  const int64_t torso_top = static_cast<int64_t>(look.torso_top * h) + dy;
  const int64_t legs_top = static_cast<int64_t>(look.legs_top * h) + dy;
  const int64_t legs_bot = h - 2;
  const double torso_half = look.torso_w * w * squeeze / 2.0;
  const double leg_half = torso_half * 0.38;

  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double t = static_cast<double>(y) / h;
      for (int c = 0; c < 3; ++c) {
        const double base = (1 - t) * bg_a[c] + t * bg_b[c];
        const double noise =
            static_cast<double>(mix64(derive_seed(
                seed, 0x6e6fULL,
                (static_cast<uint64_t>(pid) * 131 + static_cast<uint64_t>(idx)) *
                        1000003ULL +
                    static_cast<uint64_t>(y * w + x) * 4 +
                    static_cast<uint64_t>(c))) %
                                32) -
            16.0;
        out.image.at(y, x, c) = clamp_px(base + noise);
      }

      bool body = false;
      const uint8_t* color = nullptr;
      // head
      const double hd = (x + 0.5 - cx) * (x + 0.5 - cx) +
                        (y + 0.5 - head_cy) * (y + 0.5 - head_cy);
      if (hd <= head_r * head_r) {
        body = true;
        color = look.head;
      } else if (y >= torso_top && y < legs_top &&
                 std::abs(x + 0.5 - cx) <= torso_half) {
        body = true;
        const int64_t band =
            (look.striped_vertical ? x : y) / look.stripe;
        color = band % 2 == 0 ? look.torso : look.torso_alt;
      } else if (y >= legs_top && y <= legs_bot) {
        const double off = std::abs(x + 0.5 - cx);
        if (off >= leg_half * 0.35 && off <= leg_half * 2.2) {
          body = true;
          color = look.legs;
        }
      }
      if (body) {
        out.silhouette.at(y, x, 0) = 255;
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = color[c];
      }
    }
  }

  // Camera tone applies to the whole frame; geometry untouched.
  const CameraTone tone = tone_of(seed, cam);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) =
            clamp_px(out.image.at(y, x, c) * tone.gain[c] + tone.offset[c]);
  return out;
}

ToyDataset generate_dataset(const DataConfig& cfg) {
  cfg.validate();
  ToyDataset data;
  data.n_ids = cfg.n_ids;
  data.n_cams = cfg.n_cams;
  data.img_h = cfg.img_h;
  data.img_w = cfg.img_w;

  const int64_t gallery_cam = cfg.n_cams > 1 ? 1 : 0;
  for (int64_t pid = 0; pid < cfg.n_ids; ++pid) {
    int64_t idx = 0;
    for (int64_t i = 0; i < cfg.imgs_per_id; ++i, ++idx) {
      const int64_t cam = i % cfg.n_cams;
      data.train.push_back(
          {render_toy_person(cfg.seed, pid, idx, cam, cfg.img_h, cfg.img_w)
               .image,
           pid, cam, idx});
    }
    for (int64_t i = 0; i < cfg.query_per_id; ++i, ++idx) {
      data.query.push_back(
          {render_toy_person(cfg.seed, pid, idx, 0, cfg.img_h, cfg.img_w)
               .image,
           pid, 0, idx});
    }
    for (int64_t i = 0; i < cfg.gallery_per_id; ++i, ++idx) {
      data.gallery.push_back({render_toy_person(cfg.seed, pid, idx,
                                                gallery_cam, cfg.img_h,
                                                cfg.img_w)
                                  .image,
                              pid, gallery_cam, idx});
    }
  }

  if (cfg.occlude_queries && !data.query.empty()) {
    // Occluders come from a library seeded independently of training-time
    // augmentation, standing in for unseen occlusions at test time.
    Library lib = Library::synthetic(derive_seed(cfg.seed, 0x716f696cULL), 8);
    Rng rng(derive_seed(cfg.seed, 0x7175657279ULL));
    std::vector<BatchItem> items;
    for (auto& q : data.query) items.push_back({q.image, q.pid, q.cam});
    auto pairs = augment_batch(items, lib, rng);
    for (size_t i = 0; i < pairs.size(); ++i)
      data.query[i].image = std::move(pairs[i].occluded);
  }
  return data;
}

namespace {

void write_split(const ToyDataset& data,
                 const std::vector<DatasetItem>& items,
                 const std::filesystem::path& dir, nlohmann::json& names) {
  std::filesystem::create_directories(dir);
  for (const auto& item : items) {
    const std::string name = std::to_string(item.pid) + "_" +
                             std::to_string(item.cam) + "_" +
                             std::to_string(item.idx) + ".png";
    write_png(dir / name, item.image);
    names.push_back(name);
  }
  (void)data;
}

std::vector<DatasetItem> read_split(const std::filesystem::path& dir,
                                    const nlohmann::json& names) {
  std::vector<DatasetItem> items;
  for (const auto& n : names) {
    const std::string name = n.get<std::string>();
    DatasetItem item;
    if (std::sscanf(name.c_str(), "%ld_%ld_%ld.png", &item.pid, &item.cam,
                    &item.idx) != 3)
      throw IoError("dataset file name not <pid>_<cam>_<idx>.png: " + name);
    item.image = take_channels(read_png(dir / name), {0, 1, 2});
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

void write_dataset(const ToyDataset& data,
                   const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  nlohmann::json manifest;
  manifest["n_ids"] = data.n_ids;
  manifest["n_cams"] = data.n_cams;
  manifest["img_h"] = data.img_h;
  manifest["img_w"] = data.img_w;
  for (const char* split : {"train", "query", "gallery"}) {
    nlohmann::json names = nlohmann::json::array();
    const auto& items = std::string(split) == "train"   ? data.train
                        : std::string(split) == "query" ? data.query
                                                        : data.gallery;
    write_split(data, items, root / split, names);
    manifest[split] = std::move(names);
  }
  std::ofstream os(root / "manifest.json");
  if (!os) throw IoError("cannot write " + (root / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

ToyDataset load_dataset(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw IoError("cannot open " + (root / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset manifest parse error: " + std::string(e.what()));
  }
  ToyDataset data;
  data.n_ids = manifest.at("n_ids").get<int64_t>();
  data.n_cams = manifest.at("n_cams").get<int64_t>();
  data.img_h = manifest.at("img_h").get<int64_t>();
  data.img_w = manifest.at("img_w").get<int64_t>();
  data.train = read_split(root / "train", manifest.at("train"));
  data.query = read_split(root / "query", manifest.at("query"));
  data.gallery = read_split(root / "gallery", manifest.at("gallery"));
  return data;
}

std::vector<std::vector<size_t>> pk_batches(
    const std::vector<DatasetItem>& items, int64_t p, int64_t k, Rng& rng) {
  if (p < 2) throw ValueError("pk_batches: P must be >= 2 (CHT needs negatives)");
  if (k < 2) throw ValueError("pk_batches: K must be >= 2 (CHT needs positives)");

  std::map<int64_t, std::vector<size_t>> by_pid;
  for (size_t i = 0; i < items.size(); ++i)
    by_pid[items[i].pid].push_back(i);
  for (const auto& [pid, idxs] : by_pid) {
    if (static_cast<int64_t>(idxs.size()) < k)
      throw ValueError("pk_batches: pid " + std::to_string(pid) + " has " +
                       std::to_string(idxs.size()) + " images, needs >= " +
                       std::to_string(k));
  }
  std::vector<int64_t> pids;
  for (const auto& [pid, idxs] : by_pid) pids.push_back(pid);
  if (static_cast<int64_t>(pids.size()) < p)
    throw ValueError("pk_batches: only " + std::to_string(pids.size()) +
                     " identities, batch needs " + std::to_string(p));

  // Fisher-Yates with the pinned RNG.
  auto shuffle = [&](auto& v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1],
                v[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
  };
  shuffle(pids);

  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < pids.size(); at += static_cast<size_t>(p)) {
    std::vector<int64_t> chunk(
        pids.begin() + static_cast<int64_t>(at),
        pids.begin() +
            std::min(pids.size(), at + static_cast<size_t>(p)));
    // Short tail: pad with pids not already in the chunk so the batch keeps
    // exactly P distinct identities.
    size_t fill = 0;
    while (static_cast<int64_t>(chunk.size()) < p) {
      const int64_t cand = pids[fill++ % at];
      if (std::find(chunk.begin(), chunk.end(), cand) == chunk.end())
        chunk.push_back(cand);
    }
    std::vector<size_t> batch;
    for (int64_t pid : chunk) {
      auto pool = by_pid.at(pid);
      shuffle(pool);
      for (int64_t j = 0; j < k; ++j) batch.push_back(pool[static_cast<size_t>(j)]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace fcf
