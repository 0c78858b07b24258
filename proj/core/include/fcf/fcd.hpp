#pragma once

#include "fcf/encoder.hpp"

namespace fcf {

struct FcdConfig {
  double alpha = 0.7;     // completion token ratio
  int64_t dec_depth = 2;  // decoder transformer layers

  /// K = floor(alpha * N); the remainder goes to L so 1 + K + L == N + 1.
  static int64_t completion_tokens(int64_t n, double alpha);
  void validate(int64_t n) const;
};

/// Feature Completion Decoder: instance-conditioned completion tokens mixed
/// with a token-axis compression of the occluded features, decoded by
/// transformer layers into holistic-equivalent patch features.
class FeatureCompletionDecoder {
 public:
  FeatureCompletionDecoder(const EncoderConfig& enc, const FcdConfig& cfg,
                           Rng& rng);

  /// f_og (B, C), f_ot (B, N, C) -> f_r (B, N+1, C):
  /// concat(f_og, proj_K(f_ot) * T_c, proj_L(f_ot)), then the gated
  /// positional injection f_r += gate(f_r) * P_e (gate zero-initialized, so
  /// the injection starts as the identity).
  Tensor hybrid_embed(const Tensor& f_og, const Tensor& f_ot) const;

  /// dec_depth transformer layers; the global slot is dropped so the output
  /// aligns index-for-index with patch positions 1..N. (B, N, C).
  Tensor decode(const Tensor& f_r) const;

  Tensor operator()(const Tensor& f_og, const Tensor& f_ot) const {
    return decode(hybrid_embed(f_og, f_ot));
  }

  /// MSE against the holistic patch tokens; the target is detached (the
  /// completion chases the holistic representation, not the reverse).
  static Tensor completion_loss(const Tensor& f_cp, const Tensor& f_ht);

  int64_t completion_count() const { return k_; }
  int64_t retained_count() const { return l_; }

  void collect(const std::string& prefix, ParamRegistry& reg) const;

 private:
  int64_t n_ = 0, k_ = 0, l_ = 0;
  FcdConfig cfg_;
  Tensor t_c_;        // (1, K, C) prototype completion tokens
  Tensor w1_;         // (N, K) token-axis projection
  Tensor w2_;         // (N, L) token-axis projection
  Linear gate_;       // (C -> 1), zero-initialized
  Tensor pos_embed_;  // (1, N+1, C)
  std::vector<TransformerLayer> blocks_;
};

}  // namespace fcf
