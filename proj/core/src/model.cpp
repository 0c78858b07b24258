#include "fcf/model.hpp"

namespace fcf {

void ModelConfig::validate() const {
  encoder.validate();
  fcd.validate(encoder.n_tokens());
  if (n_ids < 2) throw ValueError("model config: n_ids must be >= 2");
  if (!(margin >= 0.0f)) throw ValueError("model config: margin must be >= 0");
}

FcfModel::FcfModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  // One Rng per component keeps each module's initialization independent of
  // the others' parameter counts.
  Rng enc_rng(derive_seed(seed, 1));
  Rng hol_rng(derive_seed(seed, 2));
  Rng occ_rng(derive_seed(seed, 3));
  Rng com_rng(derive_seed(seed, 4));
  Rng fcd_rng(derive_seed(seed, 5));
  Rng head_rng(derive_seed(seed, 6));

  encoder_ = std::make_unique<PatchEncoder>(cfg.encoder, enc_rng);
  holistic_stream_ = std::make_unique<Stream>(cfg.encoder, hol_rng);
  occluded_stream_ = std::make_unique<Stream>(cfg.encoder, occ_rng);
  if (cfg.use_fcd) {
    completed_stream_ = std::make_unique<Stream>(cfg.encoder, com_rng,
                                                 /*with_global_bn=*/false);
    fcd_ = std::make_unique<FeatureCompletionDecoder>(cfg.encoder, cfg.fcd,
                                                      fcd_rng);
  }
  heads_ = Heads(cfg.encoder.dim, cfg.n_ids, head_rng);

  encoder_->collect("encoder", registry_);
  holistic_stream_->collect(StreamKind::Holistic, registry_);
  occluded_stream_->collect(StreamKind::Occluded, registry_);
  if (cfg.use_fcd) {
    completed_stream_->collect(StreamKind::Completed, registry_);
    fcd_->collect("fcd", registry_);
  }
  heads_.collect("head", registry_);
}

FcfModel::TrainForward FcfModel::forward_train(
    const std::vector<Image>& holistic, const std::vector<Image>& occluded,
    const std::vector<int64_t>& cams) {
  if (holistic.size() != occluded.size())
    throw ShapeError("forward_train: holistic/occluded batch size mismatch");

  TokenSeq seq_h = encoder_->encode(encoder_->embed(holistic, cams));
  TokenSeq seq_o = encoder_->encode(encoder_->embed(occluded, cams));

  TrainForward out;
  out.feats.holistic = holistic_stream_->forward(*encoder_, seq_h, training_);
  out.feats.occluded = occluded_stream_->forward(*encoder_, seq_o, training_);
  out.f_ht = seq_h.patches();
  out.f_ot = seq_o.patches();

  if (cfg_.use_fcd) {
    Tensor f_og = seq_o.global();
    out.f_cp = (*fcd_)(f_og, out.f_ot);
    TokenSeq seq_c = TokenSeq::from_parts(f_og, out.f_cp);
    out.feats.completed =
        completed_stream_->forward(*encoder_, seq_c, training_);
  }
  return out;
}

FcfModel::FrozenTargets FcfModel::freeze_targets(
    const TrainForward& fwd, const std::vector<int64_t>& pids) const {
  FrozenTargets out;
  out.f_ht = fwd.f_ht.detach();
  const int64_t b = fwd.feats.holistic.parts_bn.extent(0);
  const int64_t m = fwd.feats.holistic.parts_bn.extent(1);
  const int64_t c = fwd.feats.holistic.parts_bn.extent(2);
  {
    NoGradGuard ng;
    out.fc2_log_probs = log_softmax(
        heads_.completed_parts(
            reshape(fwd.feats.holistic.parts_bn.detach(), {b * m, c})),
        -1);
    Tensor anchors = flatten_parts(fwd.feats.holistic.parts);
    out.occluded_pairs = mine_hard_pairs(
        anchors, flatten_parts(fwd.feats.occluded.parts), pids);
    if (cfg_.use_fcd)
      out.completed_pairs = mine_hard_pairs(
          anchors, flatten_parts(fwd.feats.completed.parts), pids);
  }
  return out;
}

LossBundle FcfModel::compute_losses(const TrainForward& fwd,
                                    const std::vector<int64_t>& pids,
                                    const FrozenTargets* frozen) const {
  Tensor id = id_loss(fwd.feats, heads_, pids);

  const int64_t b = fwd.feats.holistic.parts_bn.extent(0);
  const int64_t m = fwd.feats.holistic.parts_bn.extent(1);
  const int64_t c = fwd.feats.holistic.parts_bn.extent(2);

  Tensor fcd_term, cht, fc2;
  if (cfg_.use_fcd) {
    fcd_term = FeatureCompletionDecoder::completion_loss(
        fwd.f_cp, frozen ? frozen->f_ht : fwd.f_ht);
    Tensor anchors = flatten_parts(fwd.feats.holistic.parts);
    Tensor occ = flatten_parts(fwd.feats.occluded.parts);
    Tensor comp = flatten_parts(fwd.feats.completed.parts);
    if (frozen) {
      cht = add(cht_hinge_at(anchors, occ, frozen->occluded_pairs, cfg_.margin),
                cht_hinge_at(anchors, comp, frozen->completed_pairs,
                             cfg_.margin));
    } else {
      cht = add(cht_hinge(anchors, occ, pids, cfg_.margin),
                cht_hinge(anchors, comp, pids, cfg_.margin));
    }
    Tensor completed_rows = reshape(fwd.feats.completed.parts_bn, {b * m, c});
    fc2 = frozen
              ? fc2_loss_against(completed_rows, frozen->fc2_log_probs,
                                 heads_.completed_parts)
              : fc2_loss(completed_rows,
                         reshape(fwd.feats.holistic.parts_bn, {b * m, c}),
                         heads_.completed_parts);
  } else {
    // Completion stream ablated: the cross-modal hinge against completed
    // features and both completion losses drop out.
    fcd_term = Tensor::scalar(0.0f);
    Tensor anchors = flatten_parts(fwd.feats.holistic.parts);
    Tensor occ = flatten_parts(fwd.feats.occluded.parts);
    cht = frozen ? cht_hinge_at(anchors, occ, frozen->occluded_pairs,
                                cfg_.margin)
                 : cht_hinge(anchors, occ, pids, cfg_.margin);
    fc2 = Tensor::scalar(0.0f);
  }
  return total_loss(std::move(id), std::move(fcd_term), std::move(cht),
                    std::move(fc2), cfg_.margin);
}

FcfModel::EvalForward FcfModel::forward_eval(
    const std::vector<Image>& images, const std::vector<int64_t>& cams) {
  TokenSeq seq = encoder_->encode(encoder_->embed(images, cams));
  EvalForward out;
  out.occluded = occluded_stream_->forward(*encoder_, seq, training_);
  out.holistic = holistic_stream_->forward(*encoder_, seq, training_);
  if (cfg_.use_fcd) {
    Tensor f_og = seq.global();
    Tensor f_cp = (*fcd_)(f_og, seq.patches());
    TokenSeq seq_c = TokenSeq::from_parts(f_og, f_cp);
    out.completed = completed_stream_->forward(*encoder_, seq_c, training_);
  }
  return out;
}

void FcfModel::load_state(const std::map<std::string, Tensor>& state) {
  for (auto& [name, tensor] : registry_.all()) {
    auto it = state.find(name);
    if (it == state.end())
      throw ValueError("load_state: missing tensor '" + name + "'");
    if (it->second.shape() != tensor.shape())
      throw ShapeError("load_state: shape mismatch for '" + name + "': " +
                       shape_str(it->second.shape()) + " vs " +
                       shape_str(tensor.shape()));
    auto dst = const_cast<Tensor&>(tensor).mutable_data();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace fcf
