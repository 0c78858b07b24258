#pragma once

#include <map>
#include <memory>

#include "fcf/fcd.hpp"
#include "fcf/losses.hpp"
#include "fcf/streams.hpp"

namespace fcf {

struct ModelConfig {
  EncoderConfig encoder;
  FcdConfig fcd;
  int64_t n_ids = 8;
  bool use_fcd = true;  // completion stream ablation switch
  float margin = 0.3f;  // CHT margin

  void validate() const;
};

/// Full FCFormer: shared encoder, three non-shared streams, completion
/// decoder, classifier heads. Parameter names follow the checkpoint layout
/// (encoder.*, stream.*, bnneck.*, fcd.*, head.*).
class FcfModel {
 public:
  FcfModel(const ModelConfig& cfg, uint64_t seed);

  struct TrainForward {
    FeatureTriplet feats;
    Tensor f_cp;  // FCD output (B, N, C); undefined when use_fcd is off
    Tensor f_ht;  // holistic encoder patch tokens (completion target)
    Tensor f_ot;  // occluded encoder patch tokens
  };

  /// Dual-stream pass over an aligned holistic/occluded image batch, plus
  /// the completion stream when enabled.
  TrainForward forward_train(const std::vector<Image>& holistic,
                             const std::vector<Image>& occluded,
                             const std::vector<int64_t>& cams);

  /// Detached-target snapshot for the gradient oracle. The training loss
  /// stops gradients at the completion target, the FC2 holistic side and the
  /// CHT pair selections; finite differences must hold those constant at the
  /// reference point or they would measure a different function.
  struct FrozenTargets {
    Tensor f_ht;           // completion MSE target
    Tensor fc2_log_probs;  // FC2 target log-probabilities (B*M, n_ids)
    MinedPairs occluded_pairs;
    MinedPairs completed_pairs;
  };
  FrozenTargets freeze_targets(const TrainForward& fwd,
                               const std::vector<int64_t>& pids) const;

  /// The four-part objective for one forward. With `frozen`, detached
  /// targets and mined indices come from the snapshot instead of this
  /// forward.
  LossBundle compute_losses(const TrainForward& fwd,
                            const std::vector<int64_t>& pids,
                            const FrozenTargets* frozen = nullptr) const;

  /// Inference features for one image batch: occluded-stream features plus
  /// the completion stream, computed from a single shared-encoder pass.
  struct EvalForward {
    StreamFeatures occluded;
    StreamFeatures completed;  // undefined when use_fcd is off
    StreamFeatures holistic;   // the holistic stream applied to the same
                               // encoding; for the inclusion ablation
  };
  EvalForward forward_eval(const std::vector<Image>& images,
                           const std::vector<int64_t>& cams);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return registry_; }
  const ParamRegistry& registry() const { return registry_; }

  PatchEncoder& encoder() { return *encoder_; }
  Heads& heads() { return heads_; }
  const Heads& heads() const { return heads_; }
  FeatureCompletionDecoder& fcd() { return *fcd_; }

  /// Named parameters and buffers (checkpoint payload).
  std::vector<std::pair<std::string, Tensor>> state() const {
    return registry_.all();
  }
  /// Copies values from a loaded state map; throws on missing names or shape
  /// mismatches.
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  ModelConfig cfg_;
  std::unique_ptr<PatchEncoder> encoder_;
  std::unique_ptr<Stream> holistic_stream_;
  std::unique_ptr<Stream> occluded_stream_;
  std::unique_ptr<Stream> completed_stream_;
  std::unique_ptr<FeatureCompletionDecoder> fcd_;
  Heads heads_;
  ParamRegistry registry_;
  bool training_ = true;
};

}  // namespace fcf
