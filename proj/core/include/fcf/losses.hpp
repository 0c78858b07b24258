#pragma once

#include "fcf/streams.hpp"

namespace fcf {

/// Scalar values of one step's objective, for logging. total is the exact
/// unweighted sum of the four components.
struct LossReport {
  float id = 0.0f;
  float fcd = 0.0f;
  float cht = 0.0f;
  float fc2 = 0.0f;
  float total = 0.0f;
  float margin = 0.3f;
};

/// Graph handles for backward plus the report.
struct LossBundle {
  Tensor id, fcd, cht, fc2, total;
  LossReport report;
};

/// Identity cross-entropy: both global features through the global head,
/// holistic parts and occluded parts through their heads, part terms
/// averaged over M_n.
Tensor id_loss(const FeatureTriplet& t, const Heads& heads,
               const std::vector<int64_t>& pids);

/// Hardest-pair indices mined for every anchor (ties -> lowest index).
struct MinedPairs {
  std::vector<int64_t> pos;  // hardest positive per anchor
  std::vector<int64_t> neg;  // hardest negative per anchor
};

/// Batch-hard mining of anchors (rows of `anchors`) against `candidates`
/// under squared Euclidean distance. Positives are candidates sharing the
/// anchor's pid (the anchor's own index included; the sets live in different
/// feature modes, so the self pair is a real pair). Throws naming the pid
/// when an anchor lacks a positive or a negative.
MinedPairs mine_hard_pairs(const Tensor& anchors, const Tensor& candidates,
                           const std::vector<int64_t>& pids);

/// sum_i [ d(a_i, c_pos_i) - d(a_i, c_neg_i) + margin ]_+ with squared
/// Euclidean d over mined hardest pairs.
Tensor cht_hinge(const Tensor& anchors, const Tensor& candidates,
                 const std::vector<int64_t>& pids, float margin,
                 MinedPairs* mined_out = nullptr);

/// Same hinge with the pair indices pinned (no mining). Used when the
/// gradient oracle must hold the data-dependent selections constant.
Tensor cht_hinge_at(const Tensor& anchors, const Tensor& candidates,
                    const MinedPairs& pairs, float margin);

/// Cross Hard Triplet loss: anchors are the holistic part features
/// (flattened to one vector per instance); hardest pairs are mined
/// separately within the occluded and completed feature sets.
Tensor cht_loss(const FeatureTriplet& t, const std::vector<int64_t>& pids,
                float margin);

/// Feature Completion Consistency: mean KL(p_completed || p_holistic) over
/// rows, both sides scored by the same classifier head; the holistic side
/// (features and head application) is gradient-detached.
Tensor fc2_loss(const Tensor& completed_bn, const Tensor& holistic_bn,
                const Linear& head);

/// FC2 against precomputed target log-probabilities (a constant), for the
/// gradient oracle.
Tensor fc2_loss_against(const Tensor& completed_bn,
                        const Tensor& target_log_probs, const Linear& head);

/// Unweighted sum; throws NumericError naming the first non-finite
/// component.
LossBundle total_loss(Tensor id, Tensor fcd, Tensor cht, Tensor fc2,
                      float margin);

/// Flattens (B, M, C) part features to one vector per instance (B, M*C).
Tensor flatten_parts(const Tensor& parts);

}  // namespace fcf
