#include "fcf/fcd.hpp"

#include <cmath>

namespace fcf {

int64_t FcdConfig::completion_tokens(int64_t n, double alpha) {
  return static_cast<int64_t>(std::floor(alpha * static_cast<double>(n)));
}

void FcdConfig::validate(int64_t n) const {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValueError("fcd config: alpha must lie in (0, 1)");
  if (dec_depth < 1) throw ValueError("fcd config: dec_depth must be >= 1");
  const int64_t k = completion_tokens(n, alpha);
  if (k < 1 || n - k < 1)
    throw ValueError("fcd config: alpha " + std::to_string(alpha) +
                     " leaves K=" + std::to_string(k) + ", L=" +
                     std::to_string(n - k) + " for N=" + std::to_string(n) +
                     "; both must be >= 1");
}

FeatureCompletionDecoder::FeatureCompletionDecoder(const EncoderConfig& enc,
                                                   const FcdConfig& cfg,
                                                   Rng& rng)
    : cfg_(cfg) {
  n_ = enc.n_tokens();
  cfg.validate(n_);
  k_ = FcdConfig::completion_tokens(n_, cfg.alpha);
  l_ = n_ - k_;
  t_c_ = Tensor::randn({1, k_, enc.dim}, rng, 0.02f, true);
  w1_ = Tensor::randn({n_, k_}, rng, 0.02f, true);
  w2_ = Tensor::randn({n_, l_}, rng, 0.02f, true);
  gate_ = Linear(enc.dim, 1, rng, /*with_bias=*/true);
  // Zero-init the gate so the positional injection starts as the identity.
  std::fill(gate_.weight.mutable_data().begin(),
            gate_.weight.mutable_data().end(), 0.0f);
  pos_embed_ = Tensor::randn({1, n_ + 1, enc.dim}, rng, 0.02f, true);
  blocks_.reserve(static_cast<size_t>(cfg.dec_depth));
  for (int64_t i = 0; i < cfg.dec_depth; ++i)
    blocks_.emplace_back(enc.dim, enc.heads, rng);
}

Tensor FeatureCompletionDecoder::hybrid_embed(const Tensor& f_og,
                                              const Tensor& f_ot) const {
  const int64_t b = f_ot.extent(0);
  const int64_t c = f_ot.extent(2);
  if (f_ot.extent(1) != n_)
    throw ShapeError("hybrid_embed: expected " + std::to_string(n_) +
                     " patch tokens, got " + std::to_string(f_ot.extent(1)));

  // Instance completion tokens: (K, N) x (B, N, C) -> (B, K, C), modulating
  // the broadcast prototype tokens elementwise.
  Tensor t_proj = matmul(transpose_last2(w1_), f_ot);
  Tensor t_b = mul(t_proj, t_c_);
  Tensor l_tok = matmul(transpose_last2(w2_), f_ot);  // (B, L, C)
  Tensor f_r = concat({reshape(f_og, {b, 1, c}), t_b, l_tok}, 1);

  // Gated positional injection (residual form).
  Tensor g = gate_(f_r);                   // (B, N+1, 1)
  return add(mul(g, pos_embed_), f_r);
}

Tensor FeatureCompletionDecoder::decode(const Tensor& f_r) const {
  if (f_r.extent(1) != n_ + 1)
    throw ShapeError("decode: expected sequence length " +
                     std::to_string(n_ + 1));
  Tensor x = f_r;
  for (const auto& block : blocks_) x = block(x);
  return slice(x, 1, 1, n_);  // drop the global slot
}

Tensor FeatureCompletionDecoder::completion_loss(const Tensor& f_cp,
                                                 const Tensor& f_ht) {
  return mse(f_cp, f_ht.detach());
}

void FeatureCompletionDecoder::collect(const std::string& prefix,
                                       ParamRegistry& reg) const {
  reg.add_param(prefix + ".t_c", t_c_);
  reg.add_param(prefix + ".w1", w1_);
  reg.add_param(prefix + ".w2", w2_);
  gate_.collect(prefix + ".gate", reg);
  reg.add_param(prefix + ".pos_embed", pos_embed_);
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(prefix + ".block" + std::to_string(i), reg);
}

}  // namespace fcf
