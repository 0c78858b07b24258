#pragma once

#include "fcf/encoder.hpp"

namespace fcf {

/// Per-stream feature block. parts_bn/global_bn come from this stream's own
/// BNNeck statistics.
struct StreamFeatures {
  Tensor global;     // (B, C)
  Tensor parts;      // (B, M, C)
  Tensor global_bn;  // (B, C)
  Tensor parts_bn;   // (B, M, C)
};

/// The three feature modes the losses compare. `completed` tensors are
/// undefined when the completion stream is ablated.
struct FeatureTriplet {
  StreamFeatures holistic;
  StreamFeatures occluded;
  StreamFeatures completed;
};

enum class StreamKind { Holistic, Occluded, Completed };
const char* stream_name(StreamKind kind);

/// One non-shared transformer layer plus the stream's BNNecks. The layer
/// runs once per part group; the part feature is its output at the global
/// position. The completed stream carries no global BNNeck: its global slot
/// is the occluded stream's global token, which already has one, and no loss
/// consumes a completed global feature.
class Stream {
 public:
  Stream(const EncoderConfig& cfg, Rng& rng, bool with_global_bn = true);

  StreamFeatures forward(const PatchEncoder& encoder, const TokenSeq& seq,
                         bool training);

  void collect(StreamKind kind, ParamRegistry& reg) const;

 private:
  TransformerLayer layer_;
  bool with_global_bn_;
  mutable BnNeck bn_global_;
  mutable BnNeck bn_parts_;
};

/// Identity classifier heads (BNNeck convention: no bias). The global head
/// serves both global features; part heads are shared across the M_n parts
/// of their stream. The completed-parts head is trained solely by the
/// consistency loss.
struct Heads {
  Linear global;
  Linear holistic_parts;
  Linear occluded_parts;
  Linear completed_parts;

  Heads() = default;
  Heads(int64_t dim, int64_t n_ids, Rng& rng);

  /// x_bn: (rows, C) -> logits (rows, n_ids)
  Tensor classify(const Tensor& x_bn, const Linear& head) const {
    return head(x_bn);
  }

  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

}  // namespace fcf
