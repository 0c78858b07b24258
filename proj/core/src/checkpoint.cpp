#include "fcf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fcf/errors.hpp"

namespace fcf {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'F', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_u64le(std::ostream& os, uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

uint64_t read_u64le(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  uint64_t v = 0;
  std::memcpy(&v, buf, 8);
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& named) {
  nlohmann::json manifest = nlohmann::json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : named) {
    if (manifest.contains(name))
      throw ValueError("save_tensors: duplicate name '" + name + "'");
    nlohmann::json entry;
    entry["dtype"] = "f32";
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    manifest[name] = std::move(entry);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  write_u64le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  // Payloads follow input order; manifest offsets were assigned the same way,
  // so the (key-sorted) JSON still points at the right bytes.
  for (const auto& [name, t] : named) {
    auto d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(float)));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic (expected FCF1): " + path.string());
  const uint64_t len = read_u64le(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("truncated manifest: " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest parse error in " + path.string() + ": " +
                  e.what());
  }

  const std::streampos payload_start = is.tellg();
  std::map<std::string, Tensor> out;
  for (const auto& [name, entry] : manifest.items()) {
    if (entry.at("dtype").get<std::string>() != "f32")
      throw IoError("unsupported dtype for '" + name + "' in " +
                    path.string());
    Shape shape = entry.at("shape").get<Shape>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const int64_t n = numel_of(shape);
    std::vector<float> data(static_cast<size_t>(n));
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is)
      throw IoError("truncated payload for '" + name + "' in " +
                    path.string());
    out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

void save_tensors_atomic(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, Tensor>>& named) {
  auto tmp = path;
  tmp += ".tmp";
  save_tensors(tmp, named);
  std::filesystem::rename(tmp, path);
}

}  // namespace fcf
