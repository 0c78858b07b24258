#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fcf/tensor.hpp"

namespace fcf {

/// Named-tensor container, also used for checkpoints and feature dumps.
/// Layout: magic "FCF1", u64 little-endian manifest byte length, UTF-8 JSON
/// manifest mapping name -> {dtype:"f32", shape, offset}, then raw
/// little-endian f32 payloads. Offsets are relative to the payload section.
/// Round-trips are bit-exact.
void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& named);

std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path);

/// Writes to `path.tmp` then renames, so a crash never clobbers the previous
/// checkpoint.
void save_tensors_atomic(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, Tensor>>& named);

}  // namespace fcf
