#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fcf/checkpoint.hpp"
#include "fcf/trainer.hpp"
#include "test_helpers.hpp"

using namespace fcf;
using namespace fcf::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() /
           (std::string("fcf_tr_") + tag + "_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

DataConfig small_data_config() {
  DataConfig cfg;
  cfg.n_ids = 4;
  cfg.imgs_per_id = 4;
  cfg.img_h = 32;
  cfg.img_w = 16;
  cfg.query_per_id = 1;
  cfg.gallery_per_id = 1;
  return cfg;
}

TrainConfig small_train_config(const fs::path& out, uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_p = 2;
  cfg.batch_k = 2;
  cfg.seed = seed;
  cfg.out_dir = out;
  cfg.checkpoint_every_epochs = 1;
  return cfg;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("cosine schedule reference points") {
  // pure cosine (post-warmup reference curve)
  CHECK(lr_at(0, 100, 0.008, 0.0) == doctest::Approx(0.008));
  CHECK(lr_at(100, 100, 0.008, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_at(50, 100, 0.008, 0.0) == doctest::Approx(0.004));
  // warmup scales the first 5% linearly and leaves the rest untouched
  CHECK(lr_at(0, 100, 0.008) == doctest::Approx(0.008 / 5.0));
  CHECK(lr_at(50, 100, 0.008) == doctest::Approx(0.004));
  CHECK(lr_at(100, 100, 0.008) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_at(4, 100, 0.008) ==
        doctest::Approx(lr_at(4, 100, 0.008, 0.0)));  // last warmup step
  CHECK_THROWS_AS(lr_at(101, 100, 0.008), ValueError);
}

TEST_CASE("fixed seed reproduces the loss sequence and the metrics log") {
  ToyDataset data = generate_dataset(small_data_config());
  auto run = [&](const fs::path& out) {
    FcfModel model(tiny_config(16, 1), 5);
    Trainer trainer(model, small_train_config(out, 11));
    return trainer.fit(data);
  };
  TempDir d1("rep1"), d2("rep2");
  auto r1 = run(d1.path);
  auto r2 = run(d2.path);
  auto l1 = read_lines(r1.metrics);
  auto l2 = read_lines(r2.metrics);
  REQUIRE(l1.size() == l2.size());
  CHECK(l1 == l2);  // bit-for-bit identical rows
  CHECK(l1.size() == static_cast<size_t>(r1.steps) + 1);  // header + rows
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  ToyDataset data = generate_dataset(small_data_config());
  FcfModel model(tiny_config(16, 1), 6);
  TempDir dir("lr0");
  auto cfg = small_train_config(dir.path);
  Trainer trainer(model, cfg);

  std::map<std::string, std::vector<float>> before;
  for (const auto& [name, t] : model.registry().params())
    before[name] = std::vector<float>(t.data().begin(), t.data().end());

  // a PK-shaped batch: 2 pids x 2 images (train is grouped by pid, 4 each)
  std::vector<const DatasetItem*> batch = {&data.train[0], &data.train[1],
                                           &data.train[4], &data.train[5]};
  // lr_at(total, total, ...) == 0: a step at the schedule's end moves nothing
  (void)trainer.train_step(batch, /*step=*/100, /*total_steps=*/100);
  for (const auto& [name, t] : model.registry().params()) {
    const auto& b = before.at(name);
    CHECK(std::equal(b.begin(), b.end(), t.data().begin()));
  }
}

TEST_CASE("checkpoint round-trip restores every tensor bit-exactly") {
  ToyDataset data = generate_dataset(small_data_config());
  FcfModel model(tiny_config(16, 1), 7);
  TempDir dir("ckpt");
  Trainer trainer(model, small_train_config(dir.path, 3));
  auto result = trainer.fit(data);

  auto loaded = load_tensors(result.checkpoint);
  for (const auto& [name, t] : model.state()) {
    REQUIRE_MESSAGE(loaded.count(name) == 1, name);
    auto a = t.data();
    auto b = loaded.at(name).data();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
  CHECK(loaded.count("trainer.step") == 1);
}

TEST_CASE("resume matches the uninterrupted run within 1e-6 per step") {
  ToyDataset data = generate_dataset(small_data_config());

  // Uninterrupted: 4 epochs.
  TempDir full_dir("full");
  FcfModel full_model(tiny_config(16, 1), 9);
  auto full_cfg = small_train_config(full_dir.path, 21);
  full_cfg.epochs = 4;
  Trainer full_trainer(full_model, full_cfg);
  full_trainer.fit(data);
  auto full_rows = read_lines(full_dir.path / "metrics.csv");

  // Same 4-epoch config interrupted mid-run, then resumed elsewhere.
  TempDir half_dir("half");
  {
    FcfModel model(tiny_config(16, 1), 9);
    auto cfg = small_train_config(half_dir.path, 21);
    cfg.epochs = 4;
    cfg.stop_after_steps = 3;  // not an epoch boundary
    Trainer trainer(model, cfg);
    trainer.fit(data);
  }
  TempDir resume_dir("resume");
  {
    FcfModel model(tiny_config(16, 1), 9);
    auto cfg = small_train_config(resume_dir.path, 21);
    cfg.epochs = 4;
    Trainer trainer(model, cfg);
    trainer.fit(data, half_dir.path / "checkpoint.fcf");
  }
  auto resumed_rows = read_lines(resume_dir.path / "metrics.csv");

  // The resumed log holds the tail steps; compare losses per step id.
  std::map<int64_t, std::string> full_by_step;
  for (size_t i = 1; i < full_rows.size(); ++i)
    full_by_step[std::stoll(full_rows[i])] = full_rows[i];
  REQUIRE(resumed_rows.size() > 1);
  for (size_t i = 1; i < resumed_rows.size(); ++i) {
    const auto& row = resumed_rows[i];
    const int64_t step = std::stoll(row);
    REQUIRE(full_by_step.count(step) == 1);
    // parse the total (last field) from both rows
    auto total_of = [](const std::string& r) {
      return std::stod(r.substr(r.rfind(',') + 1));
    };
    CHECK(std::abs(total_of(row) - total_of(full_by_step[step])) < 1e-6);
  }
}

TEST_CASE("every parameter receives gradient during one epoch") {
  DataConfig dcfg = small_data_config();
  dcfg.n_cams = 2;
  ToyDataset data = generate_dataset(dcfg);
  FcfModel model(tiny_config(16, 1), 13);
  TempDir dir("audit");
  auto cfg = small_train_config(dir.path, 17);
  Trainer trainer(model, cfg);

  std::map<std::string, double> grad_mass;
  Rng epoch_rng(derive_seed(cfg.seed, 0x65706f6368ULL, 0));
  auto batches = pk_batches(data.train, cfg.batch_p, cfg.batch_k, epoch_rng);
  int64_t step = 0;
  for (const auto& idxs : batches) {
    std::vector<const DatasetItem*> batch;
    for (size_t i : idxs) batch.push_back(&data.train[i]);
    (void)trainer.train_step(batch, step++, 100);
    for (const auto& [name, t] : model.registry().params()) {
      double& acc = grad_mass[name];
      for (float g : t.grad()) acc += std::abs(g);
    }
  }
  // fcd.pos_embed sits behind the zero-initialized gate, so its gradient is
  // zero at step 0 and becomes live once the gate takes its first update;
  // an epoch has >= 2 steps here, which covers it.
  for (const auto& [name, mass] : grad_mass)
    CHECK_MESSAGE(mass > 0.0, name);
}

TEST_CASE("oia ablation trains on holistic pairs only") {
  ToyDataset data = generate_dataset(small_data_config());
  FcfModel model(tiny_config(16, 1), 14);
  TempDir dir("nooia");
  auto cfg = small_train_config(dir.path);
  cfg.use_oia = false;
  cfg.flip_augment = false;
  Trainer trainer(model, cfg);
  std::vector<const DatasetItem*> batch = {&data.train[0], &data.train[1],
                                           &data.train[4], &data.train[5]};
  auto report = trainer.train_step(batch, 0, 10);
  CHECK(std::isfinite(report.total));
}
