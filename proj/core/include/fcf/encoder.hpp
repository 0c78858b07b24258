#pragma once

#include <vector>

#include "fcf/image.hpp"
#include "fcf/nn.hpp"

namespace fcf {

struct EncoderConfig {
  int64_t img_h = 64, img_w = 32;
  int64_t patch = 8;
  int64_t dim = 64;    // channel width C
  int64_t depth = 4;   // shared trunk layers
  int64_t heads = 4;
  int64_t n_cameras = 2;
  float lambda_cm = 1.0f;  // camera embedding ratio
  int64_t m_parts = 4;     // token groups for part features

  int64_t patches_y() const { return img_h / patch; }
  int64_t patches_x() const { return img_w / patch; }
  int64_t n_tokens() const { return patches_y() * patches_x(); }  // N
  int64_t seq_len() const { return n_tokens() + 1; }

  /// Divisibility requirements; throws ValueError listing the violation.
  void validate() const;
};

/// B x (N+1) x C token batch. Index 0 is the global token; 1..N are patch
/// tokens in row-major patch order.
struct TokenSeq {
  Tensor tokens;

  int64_t batch() const { return tokens.extent(0); }
  int64_t seq_len() const { return tokens.extent(1); }

  Tensor global() const;   // (B, C)
  Tensor patches() const;  // (B, N, C)

  static TokenSeq from_parts(const Tensor& global_bc, const Tensor& patches);
};

/// Maps an image batch to [-1, 1] floats, shape (B, H, W, 3).
Tensor images_to_tensor(const std::vector<Image>& imgs);

/// Non-overlapping patch extraction: (B, N, patch*patch*3), rows ordered
/// row-major over the patch grid, each row laid out (dy, dx, channel).
Tensor extract_patches(const std::vector<Image>& imgs, int64_t patch);

/// Shared ViT trunk: patch projection, global token, learned positional
/// embedding, scaled camera embedding, `depth` pre-norm transformer layers.
class PatchEncoder {
 public:
  PatchEncoder(const EncoderConfig& cfg, Rng& rng);

  /// concat(E_g, E_p) + P_E + lambda_cm * E_cm[cam], per sample.
  TokenSeq embed(const std::vector<Image>& imgs,
                 const std::vector<int64_t>& cams) const;

  /// depth x (pre-norm MHSA + MLP); shape-preserving, identity at depth 0.
  TokenSeq encode(const TokenSeq& seq) const;

  /// Part k = concat(global token, patch tokens [k*N/M, (k+1)*N/M)).
  std::vector<Tensor> split_parts(const TokenSeq& seq) const;

  void collect(const std::string& prefix, ParamRegistry& reg) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Linear patch_proj_;
  Tensor global_token_;  // (1, 1, C)
  Tensor pos_embed_;     // (1, N+1, C)
  Tensor cam_embed_;     // (n_cameras, C)
  std::vector<TransformerLayer> blocks_;
};

}  // namespace fcf
