#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fcf/image.hpp"
#include "fcf/random.hpp"

namespace fcf {

/// Position prior of an occluder class: Strong occluders (vehicles,
/// furniture, ...) sit on the ground plane and are pasted bottom-aligned;
/// Weak ones can appear anywhere.
enum class Prior { Strong, Weak };

const char* prior_name(Prior p);
Prior parse_prior(const std::string& s);

/// Background-erased occluder cut-out. The alpha channel is the binary
/// instance mask (values 0 or 255 only, at least 1% opaque).
struct OcclusionInstance {
  Image pixels;  // RGBA
  std::string class_name;
  Prior prior = Prior::Weak;
};

/// Built-in class -> prior table. Extendable through the manifest's
/// "classes" section.
const std::map<std::string, Prior>& default_class_registry();

/// Occlusion Instance Library: immutable after construction; sampling is
/// uniform over the requested prior subset.
class Library {
 public:
  /// Manifest: JSON {"version":1, "classes":[{"name","prior"}]?,
  /// "entries":[{"path","class","prior"}]}. Paths are relative to the
  /// manifest. Errors name the offending entry.
  static Library load(const std::filesystem::path& manifest_path);

  /// Procedurally drawn occluders (rectangles, ellipses, polygons with
  /// irregular boundaries); n_per_prior of each prior, deterministic in seed.
  static Library synthetic(uint64_t seed, int64_t n_per_prior);

  size_t size() const { return instances_.size(); }
  const std::vector<OcclusionInstance>& instances() const {
    return instances_;
  }

  const OcclusionInstance& sample_strong(Rng& rng) const;
  const OcclusionInstance& sample_weak(Rng& rng) const;
  const OcclusionInstance& sample_any(Rng& rng) const;

  size_t strong_count() const { return strong_.size(); }
  size_t weak_count() const { return weak_.size(); }

 private:
  void add(OcclusionInstance inst);
  std::vector<OcclusionInstance> instances_;
  std::vector<size_t> strong_, weak_;
};

}  // namespace fcf
