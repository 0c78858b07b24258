#include "fcf/encoder.hpp"

namespace fcf {

void EncoderConfig::validate() const {
  std::vector<std::string> errs;
  if (img_h <= 0 || img_w <= 0 || patch <= 0 || dim <= 0 || heads <= 0 ||
      n_cameras <= 0 || m_parts <= 0 || depth < 0)
    errs.push_back("extents must be positive (depth may be 0)");
  if (patch > 0 && img_h % patch != 0)
    errs.push_back("img_h " + std::to_string(img_h) +
                   " not divisible by patch " + std::to_string(patch));
  if (patch > 0 && img_w % patch != 0)
    errs.push_back("img_w " + std::to_string(img_w) +
                   " not divisible by patch " + std::to_string(patch));
  if (heads > 0 && dim % heads != 0)
    errs.push_back("dim " + std::to_string(dim) + " not divisible by heads " +
                   std::to_string(heads));
  if (m_parts > 0 && patch > 0 && n_tokens() % m_parts != 0)
    errs.push_back("m_parts " + std::to_string(m_parts) +
                   " does not divide N = " + std::to_string(n_tokens()));
  if (!errs.empty()) {
    std::string all = "encoder config invalid:";
    for (const auto& e : errs) all += "\n  - " + e;
    throw ValueError(all);
  }
}

Tensor TokenSeq::global() const {
  const int64_t b = batch(), c = tokens.extent(2);
  return reshape(slice(tokens, 1, 0, 1), {b, c});
}

Tensor TokenSeq::patches() const {
  return slice(tokens, 1, 1, seq_len() - 1);
}

TokenSeq TokenSeq::from_parts(const Tensor& global_bc, const Tensor& patches) {
  const int64_t b = patches.extent(0), c = patches.extent(2);
  return TokenSeq{concat({reshape(global_bc, {b, 1, c}), patches}, 1)};
}

Tensor images_to_tensor(const std::vector<Image>& imgs) {
  if (imgs.empty()) throw ValueError("images_to_tensor: empty batch");
  const int64_t h = imgs[0].h, w = imgs[0].w;
  std::vector<float> data;
  data.reserve(imgs.size() * static_cast<size_t>(h * w * 3));
  for (const auto& img : imgs) {
    if (img.h != h || img.w != w || img.ch != 3)
      throw ShapeError("images_to_tensor: inconsistent image extents");
    for (uint8_t v : img.px)
      data.push_back(static_cast<float>(v) / 127.5f - 1.0f);
  }
  return Tensor::from_data({static_cast<int64_t>(imgs.size()), h, w, 3},
                           std::move(data));
}

Tensor extract_patches(const std::vector<Image>& imgs, int64_t patch) {
  if (imgs.empty()) throw ValueError("extract_patches: empty batch");
  const int64_t h = imgs[0].h, w = imgs[0].w;
  if (h % patch != 0 || w % patch != 0)
    throw ShapeError("extract_patches: image extents not divisible by patch");
  const int64_t py = h / patch, px = w / patch;
  const int64_t n = py * px;
  const int64_t plen = patch * patch * 3;
  std::vector<float> data(imgs.size() * static_cast<size_t>(n * plen));
  size_t at = 0;
  for (const auto& img : imgs) {
    if (img.h != h || img.w != w || img.ch != 3)
      throw ShapeError("extract_patches: inconsistent image extents");
    for (int64_t gy = 0; gy < py; ++gy)
      for (int64_t gx = 0; gx < px; ++gx)
        for (int64_t dy = 0; dy < patch; ++dy)
          for (int64_t dx = 0; dx < patch; ++dx)
            for (int64_t c = 0; c < 3; ++c)
              data[at++] = static_cast<float>(
                               img.at(gy * patch + dy, gx * patch + dx, c)) /
                               127.5f -
                           1.0f;
  }
  return Tensor::from_data({static_cast<int64_t>(imgs.size()), n, plen},
                           std::move(data));
}

PatchEncoder::PatchEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  patch_proj_ = Linear(cfg.patch * cfg.patch * 3, cfg.dim, rng);
  global_token_ = Tensor::randn({1, 1, cfg.dim}, rng, 0.02f, true);
  pos_embed_ = Tensor::randn({1, cfg_.seq_len(), cfg.dim}, rng, 0.02f, true);
  cam_embed_ = Tensor::randn({cfg.n_cameras, cfg.dim}, rng, 0.02f, true);
  blocks_.reserve(static_cast<size_t>(cfg.depth));
  for (int64_t i = 0; i < cfg.depth; ++i)
    blocks_.emplace_back(cfg.dim, cfg.heads, rng);
}

TokenSeq PatchEncoder::embed(const std::vector<Image>& imgs,
                             const std::vector<int64_t>& cams) const {
  const int64_t b = static_cast<int64_t>(imgs.size());
  if (static_cast<int64_t>(cams.size()) != b)
    throw ShapeError("embed: camera index count does not match batch");
  for (int64_t cam : cams) {
    if (cam < 0 || cam >= cfg_.n_cameras)
      throw ValueError("embed: camera index " + std::to_string(cam) +
                       " out of range [0," + std::to_string(cfg_.n_cameras) +
                       ")");
  }
  if (imgs[0].h != cfg_.img_h || imgs[0].w != cfg_.img_w)
    throw ShapeError(
        "embed: image extents do not match the configured size (positional "
        "embedding is not interpolated)");

  Tensor patches = extract_patches(imgs, cfg_.patch);   // (B, N, p*p*3)
  Tensor ep = patch_proj_(patches);                     // (B, N, C)
  // Broadcast the learned global token over the batch.
  Tensor eg = add(global_token_, Tensor::zeros({b, 1, cfg_.dim}));
  Tensor tokens = add(concat({eg, ep}, 1), pos_embed_);
  if (cfg_.lambda_cm != 0.0f) {
    Tensor cam_vec = gather_rows(cam_embed_, cams);     // (B, C)
    tokens = add(tokens, mul_scalar(reshape(cam_vec, {b, 1, cfg_.dim}),
                                    cfg_.lambda_cm));
  }
  return TokenSeq{tokens};
}

TokenSeq PatchEncoder::encode(const TokenSeq& seq) const {
  if (seq.tokens.extent(1) != cfg_.seq_len() ||
      seq.tokens.extent(2) != cfg_.dim)
    throw ShapeError("encode: token shape does not match config");
  Tensor x = seq.tokens;
  for (const auto& block : blocks_) x = block(x);
  return TokenSeq{x};
}

std::vector<Tensor> PatchEncoder::split_parts(const TokenSeq& seq) const {
  const int64_t n = seq.seq_len() - 1;
  if (n % cfg_.m_parts != 0)
    throw ValueError("split_parts: m_parts does not divide N");
  const int64_t b = seq.batch(), c = seq.tokens.extent(2);
  const int64_t per = n / cfg_.m_parts;
  Tensor global = reshape(seq.global(), {b, 1, c});
  std::vector<Tensor> parts;
  parts.reserve(static_cast<size_t>(cfg_.m_parts));
  for (int64_t k = 0; k < cfg_.m_parts; ++k) {
    Tensor chunk = slice(seq.tokens, 1, 1 + k * per, per);
    parts.push_back(concat({global, chunk}, 1));
  }
  return parts;
}

void PatchEncoder::collect(const std::string& prefix,
                           ParamRegistry& reg) const {
  patch_proj_.collect(prefix + ".patch_proj", reg);
  reg.add_param(prefix + ".global_token", global_token_);
  reg.add_param(prefix + ".pos_embed", pos_embed_);
  reg.add_param(prefix + ".cam_embed", cam_embed_);
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(prefix + ".block" + std::to_string(i), reg);
}

}  // namespace fcf
