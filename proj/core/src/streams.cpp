#include "fcf/streams.hpp"

namespace fcf {

const char* stream_name(StreamKind kind) {
  switch (kind) {
    case StreamKind::Holistic: return "holistic";
    case StreamKind::Occluded: return "occluded";
    default: return "completed";
  }
}

Stream::Stream(const EncoderConfig& cfg, Rng& rng, bool with_global_bn)
    : layer_(cfg.dim, cfg.heads, rng),
      with_global_bn_(with_global_bn),
      bn_parts_(cfg.dim) {
  if (with_global_bn_) bn_global_ = BnNeck(cfg.dim);
}

StreamFeatures Stream::forward(const PatchEncoder& encoder,
                               const TokenSeq& seq, bool training) {
  const int64_t b = seq.batch();
  const int64_t c = seq.tokens.extent(2);
  if (training && b < 2)
    throw ValueError("stream forward: training mode needs batch size >= 2 "
                     "for BNNeck statistics");

  StreamFeatures out;
  out.global = seq.global();

  auto part_seqs = encoder.split_parts(seq);
  std::vector<Tensor> part_feats;
  part_feats.reserve(part_seqs.size());
  for (const auto& ps : part_seqs) {
    Tensor y = layer_(ps);
    part_feats.push_back(slice(y, 1, 0, 1));  // (B, 1, C) at the global slot
  }
  out.parts = concat(part_feats, 1);  // (B, M, C)

  const int64_t m = out.parts.extent(1);
  out.global_bn = with_global_bn_ ? bn_global_(out.global, training)
                                  : out.global;
  out.parts_bn = reshape(bn_parts_(reshape(out.parts, {b * m, c}), training),
                         {b, m, c});
  return out;
}

void Stream::collect(StreamKind kind, ParamRegistry& reg) const {
  const std::string name = stream_name(kind);
  layer_.collect("stream." + name + ".layer", reg);
  if (with_global_bn_) bn_global_.collect("bnneck." + name + ".global", reg);
  bn_parts_.collect("bnneck." + name + ".parts", reg);
}

Heads::Heads(int64_t dim, int64_t n_ids, Rng& rng)
    : global(dim, n_ids, rng, /*with_bias=*/false),
      holistic_parts(dim, n_ids, rng, false),
      occluded_parts(dim, n_ids, rng, false),
      completed_parts(dim, n_ids, rng, false) {}

void Heads::collect(const std::string& prefix, ParamRegistry& reg) const {
  global.collect(prefix + ".global", reg);
  holistic_parts.collect(prefix + ".holistic_parts", reg);
  occluded_parts.collect(prefix + ".occluded_parts", reg);
  completed_parts.collect(prefix + ".completed_parts", reg);
}

}  // namespace fcf
