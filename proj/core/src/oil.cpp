#include "fcf/oil.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace fcf {

const char* prior_name(Prior p) {
  return p == Prior::Strong ? "strong" : "weak";
}

Prior parse_prior(const std::string& s) {
  if (s == "strong") return Prior::Strong;
  if (s == "weak") return Prior::Weak;
  throw ValueError("unknown prior '" + s + "' (expected strong|weak)");
}

const std::map<std::string, Prior>& default_class_registry() {
  static const std::map<std::string, Prior> registry = {
      {"car", Prior::Strong},          {"truck", Prior::Strong},
      {"bicycle", Prior::Strong},      {"motorcycle", Prior::Strong},
      {"fire hydrant", Prior::Strong}, {"table", Prior::Strong},
      {"pedestrian", Prior::Strong},   {"chair", Prior::Strong},
      {"bench", Prior::Strong},        {"umbrella", Prior::Weak},
      {"backpack", Prior::Weak},       {"suitcase", Prior::Weak},
      {"road sign", Prior::Weak},      {"kite", Prior::Weak},
      {"tennis racket", Prior::Weak},  {"billboard", Prior::Weak},
  };
  return registry;
}

namespace {

/// Binarize alpha at 128 and validate the >=1% coverage invariant.
void finalize_alpha(OcclusionInstance& inst, const std::string& what) {
  int64_t opaque = 0;
  for (int64_t y = 0; y < inst.pixels.h; ++y) {
    for (int64_t x = 0; x < inst.pixels.w; ++x) {
      uint8_t& a = inst.pixels.at(y, x, 3);
      a = a >= 128 ? 255 : 0;
      if (a == 255) ++opaque;
    }
  }
  const int64_t total = inst.pixels.h * inst.pixels.w;
  if (opaque * 100 < total)
    throw ValueError("occlusion instance " + what +
                     ": alpha mask is less than 1% opaque");
}

void draw_stripes(Image& img, Rng& rng) {
  const uint8_t base[3] = {static_cast<uint8_t>(40 + rng.uniform_int(180)),
                           static_cast<uint8_t>(40 + rng.uniform_int(180)),
                           static_cast<uint8_t>(40 + rng.uniform_int(180))};
  const uint8_t alt[3] = {static_cast<uint8_t>(40 + rng.uniform_int(180)),
                          static_cast<uint8_t>(40 + rng.uniform_int(180)),
                          static_cast<uint8_t>(40 + rng.uniform_int(180))};
  const int64_t stripe = 2 + rng.uniform_int(6);
  const bool vertical = rng.bernoulli(0.5);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      const int64_t band = (vertical ? x : y) / stripe;
      const uint8_t* c = (band % 2 == 0) ? base : alt;
      img.at(y, x, 0) = c[0];
      img.at(y, x, 1) = c[1];
      img.at(y, x, 2) = c[2];
    }
}

/// Irregular wavy ellipse; bbox fill ratio ~pi/4, comfortably above the
/// 50% needed for the augmented-mask area band.
void carve_ellipse(Image& img, Rng& rng) {
  const double cy = img.h / 2.0, cx = img.w / 2.0;
  const double ry = img.h / 2.0 - 0.5, rx = img.w / 2.0 - 0.5;
  // Low-frequency radial wobble.
  const double phase = rng.uniform(0.0, 6.28318);
  const double amp = rng.uniform(0.05, 0.12);
  const int lobes = 3 + static_cast<int>(rng.uniform_int(4));
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
      const double theta = std::atan2(dy, dx);
      const double lim = 1.0 + amp * std::sin(lobes * theta + phase);
      img.at(y, x, 3) = (dx * dx + dy * dy <= lim * lim) ? 255 : 0;
    }
}

void carve_notched_rect(Image& img, Rng& rng) {
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) img.at(y, x, 3) = 255;
  // A few shallow random notches on the boundary.
  const int notches = 2 + static_cast<int>(rng.uniform_int(4));
  for (int n = 0; n < notches; ++n) {
    const int64_t nw = 1 + rng.uniform_int(std::max<int64_t>(1, img.w / 5));
    const int64_t nh = 1 + rng.uniform_int(std::max<int64_t>(1, img.h / 5));
    const int64_t x0 = rng.uniform_int(std::max<int64_t>(1, img.w - nw + 1));
    const bool top = rng.bernoulli(0.5);
    for (int64_t y = 0; y < nh; ++y)
      for (int64_t x = x0; x < x0 + nw; ++x)
        img.at(top ? y : img.h - 1 - y, x, 3) = 0;
  }
}

void carve_quad(Image& img, Rng& rng) {
  // Convex quadrilateral. Jitter is capped at 8% per axis so the bbox fill
  // ratio stays above ~60%; the augmented-mask area band needs >= 50%.
  const double jx = 0.08, jy = 0.08;
  const double px[4] = {rng.uniform(0.0, jx) * img.w,
                        img.w - 1 - rng.uniform(0.0, jx) * img.w,
                        img.w - 1 - rng.uniform(0.0, jx) * img.w,
                        rng.uniform(0.0, jx) * img.w};
  const double py[4] = {rng.uniform(0.0, jy) * img.h,
                        rng.uniform(0.0, jy) * img.h,
                        img.h - 1 - rng.uniform(0.0, jy) * img.h,
                        img.h - 1 - rng.uniform(0.0, jy) * img.h};
  auto inside = [&](double x, double y) {
    for (int i = 0; i < 4; ++i) {
      const int j = (i + 1) % 4;
      const double cross =
          (px[j] - px[i]) * (y - py[i]) - (py[j] - py[i]) * (x - px[i]);
      if (cross < 0) return false;
    }
    return true;
  };
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      img.at(y, x, 3) = inside(x + 0.5, y + 0.5) ? 255 : 0;
}

}  // namespace

void Library::add(OcclusionInstance inst) {
  const size_t idx = instances_.size();
  (inst.prior == Prior::Strong ? strong_ : weak_).push_back(idx);
  instances_.push_back(std::move(inst));
}

Library Library::load(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest parse error in " + manifest_path.string() + ": " +
                  e.what());
  }

  auto registry = default_class_registry();
  if (doc.contains("classes")) {
    for (const auto& c : doc.at("classes")) {
      const std::string name = c.at("name").get<std::string>();
      const Prior prior = parse_prior(c.at("prior").get<std::string>());
      auto [it, inserted] = registry.emplace(name, prior);
      if (!inserted && it->second != prior)
        throw ValueError("manifest class '" + name +
                         "' conflicts with the registry prior " +
                         prior_name(it->second));
    }
  }

  Library lib;
  const auto base = manifest_path.parent_path();
  for (const auto& e : doc.at("entries")) {
    const std::string rel = e.at("path").get<std::string>();
    const std::string cls = e.at("class").get<std::string>();
    const Prior prior = parse_prior(e.at("prior").get<std::string>());
    auto it = registry.find(cls);
    if (it == registry.end())
      throw ValueError("manifest entry '" + rel + "': unknown class '" + cls +
                       "'");
    if (it->second != prior)
      throw ValueError("manifest entry '" + rel + "': prior " +
                       prior_name(prior) + " disagrees with class '" + cls +
                       "' (" + prior_name(it->second) + ")");
    OcclusionInstance inst;
    inst.pixels = read_png(base / rel);  // IoError names the file
    inst.class_name = cls;
    inst.prior = prior;
    finalize_alpha(inst, rel);
    lib.add(std::move(inst));
  }
  return lib;
}

Library Library::synthetic(uint64_t seed, int64_t n_per_prior) {
  if (n_per_prior < 1)
    throw ValueError("make_synthetic_library: n_per_prior must be >= 1");
  std::vector<std::string> strong_names, weak_names;
  for (const auto& [name, prior] : default_class_registry())
    (prior == Prior::Strong ? strong_names : weak_names).push_back(name);

  Library lib;
  int64_t counter = 0;
  for (Prior prior : {Prior::Strong, Prior::Weak}) {
    const auto& names = prior == Prior::Strong ? strong_names : weak_names;
    for (int64_t i = 0; i < n_per_prior; ++i, ++counter) {
      Rng rng(derive_seed(seed, 0x6f696cULL, static_cast<uint64_t>(counter)));
      const int64_t h = 24 + rng.uniform_int(25);
      const int64_t w = 24 + rng.uniform_int(25);
      OcclusionInstance inst;
      inst.pixels = Image(h, w, 4);
      draw_stripes(inst.pixels, rng);
      switch (rng.uniform_int(3)) {
        case 0: carve_notched_rect(inst.pixels, rng); break;
        case 1: carve_ellipse(inst.pixels, rng); break;
        default: carve_quad(inst.pixels, rng); break;
      }
      inst.class_name = names[static_cast<size_t>(i) % names.size()];
      inst.prior = prior;
      finalize_alpha(inst, "synthetic#" + std::to_string(counter));
      lib.add(std::move(inst));
    }
  }
  return lib;
}

namespace {
const OcclusionInstance& pick(const std::vector<OcclusionInstance>& all,
                              const std::vector<size_t>& subset,
                              const char* which, Rng& rng) {
  if (subset.empty())
    throw ValueError(std::string("empty prior subset: ") + which);
  return all[subset[static_cast<size_t>(
      rng.uniform_int(static_cast<int64_t>(subset.size())))]];
}
}  // namespace

const OcclusionInstance& Library::sample_strong(Rng& rng) const {
  return pick(instances_, strong_, "strong", rng);
}

const OcclusionInstance& Library::sample_weak(Rng& rng) const {
  return pick(instances_, weak_, "weak", rng);
}

const OcclusionInstance& Library::sample_any(Rng& rng) const {
  if (instances_.empty()) throw ValueError("empty occlusion library");
  return instances_[static_cast<size_t>(
      rng.uniform_int(static_cast<int64_t>(instances_.size())))];
}

}  // namespace fcf
