#include "fcf/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fcf/checkpoint.hpp"

namespace fcf {

void TrainConfig::validate() const {
  std::vector<std::string> errs;
  if (epochs < 1) errs.push_back("epochs must be >= 1");
  if (!(base_lr > 0.0)) errs.push_back("base_lr must be positive");
  if (batch_p < 2) errs.push_back("batch_p must be >= 2");
  if (batch_k < 2) errs.push_back("batch_k must be >= 2");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0))
    errs.push_back("warmup_frac must lie in [0, 1)");
  if (!(delta_lo > 0.0 && delta_hi < 1.0 && delta_lo <= delta_hi))
    errs.push_back("delta range must satisfy 0 < lo <= hi < 1");
  if (oil_per_prior < 1) errs.push_back("oil_per_prior must be >= 1");
  if (!errs.empty()) {
    std::string all = "train config invalid:";
    for (const auto& e : errs) all += "\n  - " + e;
    throw ValueError(all);
  }
}

double lr_at(int64_t step, int64_t total_steps, double base_lr,
             double warmup_frac) {
  if (total_steps < 1) throw ValueError("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw ValueError("lr_at: step out of [0, total_steps]");
  const double cosine =
      base_lr *
      (1.0 + std::cos(M_PI * static_cast<double>(step) /
                      static_cast<double>(total_steps))) /
      2.0;
  const int64_t warmup_steps = static_cast<int64_t>(
      std::floor(warmup_frac * static_cast<double>(total_steps)));
  if (warmup_steps <= 0 || step >= warmup_steps) return cosine;
  return cosine * static_cast<double>(step + 1) /
         static_cast<double>(warmup_steps);
}

Trainer::Trainer(FcfModel& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      library_(Library::synthetic(derive_seed(cfg.seed, 0x747261696eULL),
                                  cfg.oil_per_prior)),
      opt_(cfg.momentum, cfg.weight_decay) {
  cfg_.validate();
}

int64_t Trainer::steps_per_epoch(const ToyDataset& data) const {
  Rng probe(derive_seed(cfg_.seed, 0x65706f6368ULL, 0));
  return static_cast<int64_t>(
      pk_batches(data.train, cfg_.batch_p, cfg_.batch_k, probe).size());
}

LossReport Trainer::train_step(const std::vector<const DatasetItem*>& batch,
                               int64_t step, int64_t total_steps) {
  Rng rng(derive_seed(cfg_.seed, 0x73746570ULL, static_cast<uint64_t>(step)));

  std::vector<BatchItem> items;
  items.reserve(batch.size());
  for (const DatasetItem* d : batch) {
    Image img = d->image;
    if (cfg_.flip_augment && rng.bernoulli(0.5)) img = flip_horizontal(img);
    items.push_back({std::move(img), d->pid, d->cam});
  }

  std::vector<Image> holistic, occluded;
  std::vector<int64_t> pids, cams;
  if (cfg_.use_oia) {
    auto pairs = augment_batch(items, library_, rng, cfg_.placement,
                               cfg_.delta_lo, cfg_.delta_hi);
    for (auto& p : pairs) {
      holistic.push_back(std::move(p.holistic));
      occluded.push_back(std::move(p.occluded));
      pids.push_back(p.pid);
      cams.push_back(p.cam);
    }
  } else {
    for (auto& it : items) {
      holistic.push_back(it.image);
      occluded.push_back(std::move(it.image));
      pids.push_back(it.pid);
      cams.push_back(it.cam);
    }
  }

  auto fwd = model_.forward_train(holistic, occluded, cams);
  auto bundle = model_.compute_losses(fwd, pids);

  model_.registry().zero_grad();
  bundle.total.backward();
  opt_.step(model_.registry(), static_cast<float>(lr_at(
                                   step, total_steps, cfg_.base_lr,
                                   cfg_.warmup_frac)));
  return bundle.report;
}

namespace {

std::string csv_row(int64_t step, double lr, const LossReport& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                static_cast<long long>(step), lr, r.id, r.fcd, r.cht, r.fc2,
                r.total);
  return buf;
}

}  // namespace

FitResult Trainer::fit(const ToyDataset& data,
                       std::optional<std::filesystem::path> resume_from) {
  model_.set_training(true);
  std::filesystem::create_directories(cfg_.out_dir);
  const auto metrics_path = cfg_.out_dir / "metrics.csv";
  const auto ckpt_path = cfg_.out_dir / "checkpoint.fcf";

  const int64_t per_epoch = steps_per_epoch(data);
  const int64_t total_steps = per_epoch * cfg_.epochs;

  int64_t start_step = 0;
  if (resume_from) {
    auto state = load_tensors(*resume_from);
    model_.load_state(state);
    opt_.load_state(state, "optim.momentum.");
    auto it = state.find("trainer.step");
    if (it == state.end())
      throw IoError("resume checkpoint lacks trainer.step: " +
                    resume_from->string());
    start_step = static_cast<int64_t>(it->second.item());
  }

  std::ofstream metrics(metrics_path,
                        start_step == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics)
    throw IoError("cannot open metrics log: " + metrics_path.string());
  if (start_step == 0) metrics << "step,lr,id,fcd,cht,fc2,total\n";

  auto save = [&](int64_t next_step) {
    auto named = model_.state();
    auto opt_state = opt_.state();
    named.insert(named.end(), opt_state.begin(), opt_state.end());
    named.emplace_back("trainer.step",
                       Tensor::scalar(static_cast<float>(next_step)));
    save_tensors_atomic(ckpt_path, named);
  };

  FitResult result;
  result.metrics = metrics_path;
  result.checkpoint = ckpt_path;

  for (int64_t step = start_step; step < total_steps; ++step) {
    const int64_t epoch = step / per_epoch;
    const int64_t pos = step % per_epoch;
    // Batches of an epoch are derived from (seed, epoch), so a resumed run
    // regenerates the same schedule it left.
    Rng epoch_rng(derive_seed(cfg_.seed, 0x65706f6368ULL,
                              static_cast<uint64_t>(epoch)));
    auto batches = pk_batches(data.train, cfg_.batch_p, cfg_.batch_k,
                              epoch_rng);
    std::vector<const DatasetItem*> batch;
    for (size_t i : batches[static_cast<size_t>(pos)])
      batch.push_back(&data.train[i]);

    LossReport report;
    try {
      report = train_step(batch, step, total_steps);
    } catch (const NumericError& e) {
      // Leave the last checkpoint on disk untouched and surface the step.
      throw NumericError("training diverged at step " + std::to_string(step) +
                         ": " + e.what() + " (last checkpoint preserved at " +
                         ckpt_path.string() + ")");
    }
    metrics << csv_row(step, lr_at(step, total_steps, cfg_.base_lr,
                                   cfg_.warmup_frac),
                       report);
    metrics.flush();
    result.last = report;
    result.steps = step + 1;

    const bool stopping =
        cfg_.stop_after_steps > 0 && step + 1 >= cfg_.stop_after_steps;
    const bool epoch_end = pos == per_epoch - 1;
    if (stopping || (epoch_end && ((epoch + 1) % cfg_.checkpoint_every_epochs ==
                                       0 ||
                                   step + 1 == total_steps)))
      save(step + 1);
    if (stopping) break;
  }
  if (result.steps == 0) result.steps = start_step;
  return result;
}

}  // namespace fcf
