#include "fcf/losses.hpp"

#include <cmath>

namespace fcf {

Tensor flatten_parts(const Tensor& parts) {
  const int64_t b = parts.extent(0);
  return reshape(parts, {b, parts.extent(1) * parts.extent(2)});
}

Tensor id_loss(const FeatureTriplet& t, const Heads& heads,
               const std::vector<int64_t>& pids) {
  const int64_t b = t.holistic.parts_bn.extent(0);
  const int64_t m = t.holistic.parts_bn.extent(1);
  const int64_t c = t.holistic.parts_bn.extent(2);

  // Part labels repeat each instance's pid M times (rows are (b, m) pairs).
  std::vector<int64_t> part_labels;
  part_labels.reserve(static_cast<size_t>(b * m));
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < m; ++j)
      part_labels.push_back(pids[static_cast<size_t>(i)]);

  // L_id_g couples the two global probabilities; log of the product splits
  // into the two cross-entropies.
  Tensor global_term =
      add(cross_entropy(heads.classify(t.occluded.global_bn, heads.global),
                        pids),
          cross_entropy(heads.classify(t.holistic.global_bn, heads.global),
                        pids));

  auto part_term = [&](const Tensor& parts_bn, const Linear& head) {
    Tensor logits = heads.classify(reshape(parts_bn, {b * m, c}), head);
    return cross_entropy(logits, part_labels);  // mean over B*M rows
  };

  return add(global_term,
             add(part_term(t.holistic.parts_bn, heads.holistic_parts),
                 part_term(t.occluded.parts_bn, heads.occluded_parts)));
}

namespace {

/// Squared Euclidean distance between anchor row i and candidate row j.
double sq_dist(const float* a, const float* b, int64_t d) {
  double acc = 0.0;
  for (int64_t k = 0; k < d; ++k) {
    const double diff = static_cast<double>(a[k]) - b[k];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

MinedPairs mine_hard_pairs(const Tensor& anchors, const Tensor& candidates,
                           const std::vector<int64_t>& pids) {
  const int64_t b = anchors.extent(0);
  const int64_t d = anchors.extent(1);
  if (candidates.extent(0) != b || candidates.extent(1) != d)
    throw ShapeError("mine_hard_pairs: shape mismatch between " +
                     shape_str(anchors.shape()) + " and " +
                     shape_str(candidates.shape()));
  if (static_cast<int64_t>(pids.size()) != b)
    throw ShapeError("mine_hard_pairs: pid count mismatch");

  const float* pa = anchors.data().data();
  const float* pc = candidates.data().data();
  MinedPairs out;
  out.pos.resize(static_cast<size_t>(b));
  out.neg.resize(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    int64_t best_pos = -1, best_neg = -1;
    double worst_pos = -1.0, best_neg_d = 0.0;
    for (int64_t j = 0; j < b; ++j) {
      const double dist = sq_dist(pa + i * d, pc + j * d, d);
      if (pids[static_cast<size_t>(j)] == pids[static_cast<size_t>(i)]) {
        if (dist > worst_pos) {  // strict: ties keep the lowest index
          worst_pos = dist;
          best_pos = j;
        }
      } else {
        if (best_neg < 0 || dist < best_neg_d) {
          best_neg_d = dist;
          best_neg = j;
        }
      }
    }
    if (best_pos < 0)
      throw ValueError("cht mining: no positive candidate for pid " +
                       std::to_string(pids[static_cast<size_t>(i)]));
    if (best_neg < 0)
      throw ValueError("cht mining: no negative candidate for pid " +
                       std::to_string(pids[static_cast<size_t>(i)]));
    out.pos[static_cast<size_t>(i)] = best_pos;
    out.neg[static_cast<size_t>(i)] = best_neg;
  }
  return out;
}

Tensor cht_hinge(const Tensor& anchors, const Tensor& candidates,
                 const std::vector<int64_t>& pids, float margin,
                 MinedPairs* mined_out) {
  MinedPairs mined = mine_hard_pairs(anchors, candidates, pids);
  if (mined_out) *mined_out = mined;
  return cht_hinge_at(anchors, candidates, mined, margin);
}

Tensor cht_hinge_at(const Tensor& anchors, const Tensor& candidates,
                    const MinedPairs& mined, float margin) {
  const int64_t d = anchors.extent(1);
  Tensor ones = Tensor::full({d, 1}, 1.0f);
  auto row_sq_dist = [&](const std::vector<int64_t>& idx) {
    Tensor diff = sub(anchors, gather_rows(candidates, idx));
    return matmul(mul(diff, diff), ones);  // (B, 1)
  };
  Tensor d_pos = row_sq_dist(mined.pos);
  Tensor d_neg = row_sq_dist(mined.neg);
  Tensor hinge = relu(add_scalar(sub(d_pos, d_neg), margin));
  return sum_all(hinge);
}

Tensor cht_loss(const FeatureTriplet& t, const std::vector<int64_t>& pids,
                float margin) {
  Tensor anchors = flatten_parts(t.holistic.parts);
  Tensor occluded = flatten_parts(t.occluded.parts);
  Tensor completed = flatten_parts(t.completed.parts);
  return add(cht_hinge(anchors, occluded, pids, margin),
             cht_hinge(anchors, completed, pids, margin));
}

Tensor fc2_loss(const Tensor& completed_bn, const Tensor& holistic_bn,
                const Linear& head) {
  if (completed_bn.shape() != holistic_bn.shape())
    throw ShapeError("fc2_loss: shape mismatch between " +
                     shape_str(completed_bn.shape()) + " and " +
                     shape_str(holistic_bn.shape()));
  Tensor log_q;
  {
    // Target side fully detached: neither the holistic features nor the head
    // weights receive gradient through it.
    NoGradGuard ng;
    log_q = log_softmax(head(holistic_bn.detach()), -1);
  }
  return fc2_loss_against(completed_bn, log_q, head);
}

Tensor fc2_loss_against(const Tensor& completed_bn,
                        const Tensor& target_log_probs, const Linear& head) {
  const int64_t rows = completed_bn.extent(0);
  Tensor logits_c = head(completed_bn);
  if (logits_c.shape() != target_log_probs.shape())
    throw ShapeError("fc2_loss: target shape " +
                     shape_str(target_log_probs.shape()) +
                     " does not match logits " +
                     shape_str(logits_c.shape()));
  Tensor p = softmax(logits_c, -1);
  Tensor log_p = log_softmax(logits_c, -1);
  Tensor kl = sum_all(mul(p, sub(log_p, target_log_probs.detach())));
  return mul_scalar(kl, 1.0f / static_cast<float>(rows));
}

LossBundle total_loss(Tensor id, Tensor fcd, Tensor cht, Tensor fc2,
                      float margin) {
  const struct {
    const char* name;
    const Tensor* t;
  } comps[] = {{"id", &id}, {"fcd", &fcd}, {"cht", &cht}, {"fc2", &fc2}};
  for (const auto& c : comps) {
    if (!std::isfinite(c.t->item()))
      throw NumericError(std::string("loss component '") + c.name +
                         "' is non-finite");
  }
  LossBundle out;
  out.id = std::move(id);
  out.fcd = std::move(fcd);
  out.cht = std::move(cht);
  out.fc2 = std::move(fc2);
  out.total = add(add(out.id, out.fcd), add(out.cht, out.fc2));
  out.report = LossReport{out.id.item(), out.fcd.item(), out.cht.item(),
                          out.fc2.item(), out.total.item(), margin};
  if (!std::isfinite(out.report.total))
    throw NumericError("total loss is non-finite");
  return out;
}

}  // namespace fcf
