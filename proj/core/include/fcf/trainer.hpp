#pragma once

#include <filesystem>
#include <optional>

#include "fcf/data.hpp"
#include "fcf/model.hpp"
#include "fcf/nn.hpp"
#include "fcf/oia.hpp"

namespace fcf {

struct TrainConfig {
  int64_t epochs = 30;
  double base_lr = 0.008;
  int64_t batch_p = 4;  // identities per batch
  int64_t batch_k = 4;  // images per identity
  uint64_t seed = 0;
  double warmup_frac = 0.05;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;

  // augmentation
  bool use_oia = true;  // off: the occluded stream sees the holistic image
  bool flip_augment = true;
  PlacementMode placement = PlacementMode::Random;
  double delta_lo = 0.1, delta_hi = 0.7;
  int64_t oil_per_prior = 8;  // synthetic library size per prior set

  std::filesystem::path out_dir;  // metrics.csv + checkpoints
  int64_t checkpoint_every_epochs = 10;
  /// Stop (with a checkpoint) after this absolute step count; 0 runs to the
  /// end. The lr schedule always spans the full `epochs`, so a stopped and
  /// resumed run retraces an uninterrupted one.
  int64_t stop_after_steps = 0;

  void validate() const;
};

/// Cosine decay over [0, total_steps] scaled by a linear warmup over the
/// first warmup_frac of steps. warmup_frac = 0 gives the pure cosine
/// reference curve: base_lr at step 0, base_lr/2 at the midpoint, 0 at the
/// end.
double lr_at(int64_t step, int64_t total_steps, double base_lr,
             double warmup_frac = 0.05);

struct FitResult {
  std::filesystem::path checkpoint;  // final checkpoint
  std::filesystem::path metrics;     // CSV log
  int64_t steps = 0;
  LossReport last;
};

class Trainer {
 public:
  Trainer(FcfModel& model, const TrainConfig& cfg);

  /// Lines 7-20 of the training procedure: augment, dual-stream + FCD
  /// forward, four losses, backward, SGD step at the scheduled lr.
  LossReport train_step(const std::vector<const DatasetItem*>& batch,
                        int64_t step, int64_t total_steps);

  /// Full run over the dataset; writes metrics and checkpoints under
  /// cfg.out_dir. Resumes from `resume_from` when given (parameters,
  /// optimizer momenta and step counter are restored; the step-derived RNG
  /// makes the continuation match an uninterrupted run).
  FitResult fit(const ToyDataset& data,
                std::optional<std::filesystem::path> resume_from = {});

  int64_t steps_per_epoch(const ToyDataset& data) const;

  Sgd& optimizer() { return opt_; }

 private:
  FcfModel& model_;
  TrainConfig cfg_;
  Library library_;
  Sgd opt_;
};

}  // namespace fcf
