#include <doctest.h>

#include <cmath>

#include "fcf/gradcheck.hpp"
#include "fcf/losses.hpp"
#include "test_helpers.hpp"

using namespace fcf;
using namespace fcf::testing;

namespace {

// ---- independent reference implementations (double precision, two-loop) ----

double ref_cross_entropy(const Tensor& logits,
                         const std::vector<int64_t>& labels) {
  const int64_t rows = logits.extent(0), classes = logits.extent(1);
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double mx = -1e300;
    for (int64_t j = 0; j < classes; ++j)
      mx = std::max(mx, static_cast<double>(logits.at({r, j})));
    double denom = 0.0;
    for (int64_t j = 0; j < classes; ++j)
      denom += std::exp(static_cast<double>(logits.at({r, j})) - mx);
    total -= static_cast<double>(
                 logits.at({r, labels[static_cast<size_t>(r)]})) -
             mx - std::log(denom);
  }
  return total / static_cast<double>(rows);
}

struct RefMined {
  double loss = 0.0;
  std::vector<int64_t> pos, neg;
};

// Exhaustive O(B^2) miner + hinge, structured as plain per-anchor scans.
RefMined ref_cht_hinge(const Tensor& anchors, const Tensor& cands,
                       const std::vector<int64_t>& pids, double margin) {
  const int64_t b = anchors.extent(0), d = anchors.extent(1);
  auto dist = [&](int64_t i, int64_t j) {
    double acc = 0.0;
    for (int64_t k = 0; k < d; ++k) {
      const double diff = static_cast<double>(anchors.at({i, k})) -
                          static_cast<double>(cands.at({j, k}));
      acc += diff * diff;
    }
    return acc;
  };
  RefMined out;
  for (int64_t i = 0; i < b; ++i) {
    int64_t p = -1, n = -1;
    for (int64_t j = 0; j < b; ++j) {
      if (pids[static_cast<size_t>(j)] == pids[static_cast<size_t>(i)]) {
        if (p < 0 || dist(i, j) > dist(i, p)) p = j;
      } else {
        if (n < 0 || dist(i, j) < dist(i, n)) n = j;
      }
    }
    REQUIRE(p >= 0);
    REQUIRE(n >= 0);
    out.pos.push_back(p);
    out.neg.push_back(n);
    out.loss += std::max(dist(i, p) - dist(i, n) + margin, 0.0);
  }
  return out;
}

double ref_kl(const Tensor& logits_p, const Tensor& logits_q) {
  const int64_t rows = logits_p.extent(0), classes = logits_p.extent(1);
  auto softmax_row = [&](const Tensor& t, int64_t r) {
    std::vector<double> p(static_cast<size_t>(classes));
    double mx = -1e300;
    for (int64_t j = 0; j < classes; ++j)
      mx = std::max(mx, static_cast<double>(t.at({r, j})));
    double denom = 0.0;
    for (int64_t j = 0; j < classes; ++j) {
      p[static_cast<size_t>(j)] =
          std::exp(static_cast<double>(t.at({r, j})) - mx);
      denom += p[static_cast<size_t>(j)];
    }
    for (auto& v : p) v /= denom;
    return p;
  };
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    auto p = softmax_row(logits_p, r);
    auto q = softmax_row(logits_q, r);
    for (int64_t j = 0; j < classes; ++j)
      total += p[static_cast<size_t>(j)] *
               (std::log(p[static_cast<size_t>(j)]) -
                std::log(q[static_cast<size_t>(j)]));
  }
  return total / static_cast<double>(rows);
}

StreamFeatures fabricate_stream(Rng& rng, int64_t b, int64_t m, int64_t c) {
  StreamFeatures sf;
  sf.global = Tensor::randn({b, c}, rng);
  sf.parts = Tensor::randn({b, m, c}, rng);
  sf.global_bn = Tensor::randn({b, c}, rng);
  sf.parts_bn = Tensor::randn({b, m, c}, rng);
  return sf;
}

}  // namespace

TEST_CASE("id_loss hand cases") {
  const int64_t b = 4, m = 2, c = 4, ids = 4;
  std::vector<int64_t> pids{0, 1, 2, 3};

  SUBCASE("near-perfect classifier drives the loss below 1e-6") {
    Rng rng(1);
    Heads heads(c, ids, rng);
    // identity-times-20 weights: feature one-hot row -> logit margin 20
    for (Linear* head : {&heads.global, &heads.holistic_parts,
                         &heads.occluded_parts, &heads.completed_parts}) {
      auto w = head->weight.mutable_data();
      std::fill(w.begin(), w.end(), 0.0f);
      for (int64_t i = 0; i < std::min(c, ids); ++i)
        w[static_cast<size_t>(i * ids + i)] = 20.0f;
    }
    auto onehot = [&](int64_t rows, bool by_part) {
      std::vector<float> d(static_cast<size_t>(rows * (by_part ? m * c : c)),
                           0.0f);
      for (int64_t i = 0; i < rows; ++i) {
        if (by_part) {
          for (int64_t j = 0; j < m; ++j)
            d[static_cast<size_t>((i * m + j) * c + pids[i])] = 1.0f;
        } else {
          d[static_cast<size_t>(i * c + pids[i])] = 1.0f;
        }
      }
      return d;
    };
    FeatureTriplet t;
    t.holistic.global_bn = Tensor::from_data({b, c}, onehot(b, false));
    t.occluded.global_bn = Tensor::from_data({b, c}, onehot(b, false));
    t.holistic.parts_bn = Tensor::from_data({b, m, c}, onehot(b, true));
    t.occluded.parts_bn = Tensor::from_data({b, m, c}, onehot(b, true));
    CHECK(id_loss(t, heads, pids).item() < 1e-6f);
  }

  SUBCASE("all-zero features give 4 * ln(n_ids)") {
    Rng rng(2);
    Heads heads(c, 8, rng);
    FeatureTriplet t;
    t.holistic.global_bn = Tensor::zeros({b, c});
    t.occluded.global_bn = Tensor::zeros({b, c});
    t.holistic.parts_bn = Tensor::zeros({b, m, c});
    t.occluded.parts_bn = Tensor::zeros({b, m, c});
    // zero features -> uniform logits -> each of the four terms is ln 8
    CHECK(id_loss(t, heads, pids).item() ==
          doctest::Approx(4.0 * std::log(8.0)).epsilon(1e-6));
  }
}

TEST_CASE("id_loss matches a two-loop reference on random inputs") {
  Rng rng(3);
  const int64_t b = 6, m = 3, c = 8, ids = 5;
  std::vector<int64_t> pids{0, 4, 2, 2, 1, 3};
  Heads heads(c, ids, rng);
  FeatureTriplet t;
  t.holistic = fabricate_stream(rng, b, m, c);
  t.occluded = fabricate_stream(rng, b, m, c);

  const float got = id_loss(t, heads, pids).item();

  std::vector<int64_t> part_labels;
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < m; ++j) part_labels.push_back(pids[i]);
  NoGradGuard ng;
  double want =
      ref_cross_entropy(heads.global(t.occluded.global_bn), pids) +
      ref_cross_entropy(heads.global(t.holistic.global_bn), pids) +
      ref_cross_entropy(
          heads.holistic_parts(reshape(t.holistic.parts_bn, {b * m, c})),
          part_labels) +
      ref_cross_entropy(
          heads.occluded_parts(reshape(t.occluded.parts_bn, {b * m, c})),
          part_labels);
  CHECK(got == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("cht hand cases") {
  const float margin = 0.3f;
  SUBCASE("all features identical: loss = 2 * B * margin") {
    const int64_t b = 4, m = 2, c = 3;
    std::vector<int64_t> pids{0, 0, 1, 1};
    FeatureTriplet t;
    t.holistic.parts = Tensor::full({b, m, c}, 0.5f);
    t.occluded.parts = Tensor::full({b, m, c}, 0.5f);
    t.completed.parts = Tensor::full({b, m, c}, 0.5f);
    CHECK(cht_loss(t, pids, margin).item() ==
          doctest::Approx(2.0 * b * margin).epsilon(1e-6));
  }
  SUBCASE("separated clusters: hinge inactive, loss 0") {
    // positives at distance 0, negatives far beyond the margin
    std::vector<float> rows;
    std::vector<int64_t> pids{0, 0, 1, 1};
    for (int i = 0; i < 4; ++i) {
      const float v = i < 2 ? 0.0f : 10.0f;
      for (int j = 0; j < 6; ++j) rows.push_back(v);
    }
    Tensor feats = Tensor::from_data({4, 2, 3}, std::move(rows));
    FeatureTriplet t;
    t.holistic.parts = feats;
    t.occluded.parts = feats;
    t.completed.parts = feats;
    CHECK(cht_loss(t, pids, margin).item() == 0.0f);
  }
  SUBCASE("missing negative names the pid") {
    FeatureTriplet t;
    Rng rng(4);
    t.holistic.parts = Tensor::randn({2, 2, 3}, rng);
    t.occluded.parts = Tensor::randn({2, 2, 3}, rng);
    t.completed.parts = Tensor::randn({2, 2, 3}, rng);
    try {
      (void)cht_loss(t, {7, 7}, margin);
      FAIL("expected ValueError");
    } catch (const ValueError& e) {
      CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
  }
}

TEST_CASE("cht matches the exhaustive miner on random batches") {
  Rng rng(5);
  const int64_t b = 8, d = 12;
  for (int rep = 0; rep < 25; ++rep) {
    std::vector<int64_t> pids;
    for (int64_t i = 0; i < b; ++i) pids.push_back(i < b / 2 ? 0 : 1);
    Tensor anchors = Tensor::randn({b, d}, rng);
    Tensor cands = Tensor::randn({b, d}, rng);

    MinedPairs mined;
    const float got = cht_hinge(anchors, cands, pids, 0.3f, &mined).item();
    auto ref = ref_cht_hinge(anchors, cands, pids, 0.3);
    CHECK(mined.pos == ref.pos);
    CHECK(mined.neg == ref.neg);
    CHECK(got == doctest::Approx(ref.loss).epsilon(1e-6));
  }
}

TEST_CASE("cht ties break toward the lowest index") {
  // Two identical positive candidates and two identical negatives.
  Tensor anchors = Tensor::from_data({4, 1}, {0.0f, 0.0f, 5.0f, 5.0f});
  Tensor cands = Tensor::from_data({4, 1}, {1.0f, 1.0f, 4.0f, 4.0f});
  std::vector<int64_t> pids{0, 0, 1, 1};
  MinedPairs mined;
  (void)cht_hinge(anchors, cands, pids, 0.3f, &mined);
  CHECK(mined.pos[0] == 0);  // ties at distance 1: pick index 0, not 1
  CHECK(mined.neg[0] == 2);  // ties at distance 16: pick index 2, not 3
}

TEST_CASE("cht is invariant under pid relabeling") {
  Rng rng(6);
  const int64_t b = 6;
  Tensor hp = Tensor::randn({b, 2, 4}, rng);
  Tensor op = Tensor::randn({b, 2, 4}, rng);
  Tensor cp = Tensor::randn({b, 2, 4}, rng);
  FeatureTriplet t;
  t.holistic.parts = hp;
  t.occluded.parts = op;
  t.completed.parts = cp;
  std::vector<int64_t> pids{0, 0, 1, 1, 2, 2};
  std::vector<int64_t> relabeled{9, 9, 4, 4, 17, 17};
  CHECK(cht_loss(t, pids, 0.3f).item() ==
        cht_loss(t, relabeled, 0.3f).item());
}

TEST_CASE("cht gradient flows to anchors and mined candidates") {
  Rng rng(7);
  Tensor anchors = Tensor::randn({4, 6}, rng, 1.0f, true);
  Tensor cands = Tensor::randn({4, 6}, rng, 1.0f, true);
  std::vector<int64_t> pids{0, 0, 1, 1};
  GradCheckTask task{[&] { return cht_hinge(anchors, cands, pids, 5.0f); },
                     {{"anchors", anchors}, {"cands", cands}}};
  // Large margin keeps every hinge active, so the loss is smooth around the
  // operating point (mining switches are measure-zero for random data).
  auto rep = grad_check(task, 1e-3, 1e-2, 64, 11);
  CHECK_MESSAGE(rep.ok(), rep.summary());
}

TEST_CASE("fc2 hand cases") {
  Rng rng(8);
  SUBCASE("identical inputs give zero") {
    Linear head(4, 3, rng, false);
    Tensor x = Tensor::randn({5, 4}, rng);
    CHECK(std::abs(fc2_loss(x, x, head).item()) < 1e-7f);
  }
  SUBCASE("hand-evaluated KL: p=(0.75,0.25) vs q=(0.5,0.5)") {
    Linear head(2, 2, rng, false);
    auto w = head.weight.mutable_data();
    w[0] = 1.0f; w[1] = 0.0f; w[2] = 0.0f; w[3] = 1.0f;  // identity
    Tensor completed =
        Tensor::from_data({1, 2}, {std::log(3.0f), 0.0f});
    Tensor holistic = Tensor::zeros({1, 2});
    const float got = fc2_loss(completed, holistic, head).item();
    const double want = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(got == doctest::Approx(want).epsilon(1e-5));
    CHECK(got == doctest::Approx(0.1308).epsilon(1e-3));
  }
  SUBCASE("non-negative on random inputs, zero iff coinciding") {
    Linear head(6, 4, rng, false);
    for (int rep = 0; rep < 20; ++rep) {
      Tensor a = Tensor::randn({3, 6}, rng);
      Tensor b = Tensor::randn({3, 6}, rng);
      const float kl = fc2_loss(a, b, head).item();
      CHECK(kl >= 0.0f);
      CHECK(kl > 1e-7f);  // random distinct inputs never coincide
    }
  }
}

TEST_CASE("fc2 matches a direct double-precision KL evaluation") {
  Rng rng(9);
  Linear head(8, 5, rng, false);
  for (int rep = 0; rep < 25; ++rep) {
    Tensor a = Tensor::randn({6, 8}, rng);
    Tensor b = Tensor::randn({6, 8}, rng);
    const float got = fc2_loss(a, b, head).item();
    NoGradGuard ng;
    const double want = ref_kl(head(a), head(b));
    CHECK(got == doctest::Approx(want).epsilon(1e-5));
  }
}

TEST_CASE("fc2 detaches the holistic side and trains its head") {
  Rng rng(10);
  Linear head(4, 3, rng, false);
  head.weight.set_requires_grad(true);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0f, true);
  Tensor b = Tensor::randn({3, 4}, rng, 1.0f, true);
  Tensor loss = fc2_loss(a, b, head);
  a.zero_grad();
  b.zero_grad();
  head.weight.zero_grad();
  loss.backward();
  CHECK_FALSE(a.grad().empty());
  CHECK(b.grad().empty());
  CHECK_FALSE(head.weight.grad().empty());
}

TEST_CASE("total loss sums components exactly and checks finiteness") {
  auto s = [](float v) {
    Tensor t = Tensor::scalar(v);
    return t;
  };
  auto bundle = total_loss(s(1), s(2), s(3), s(4), 0.3f);
  CHECK(bundle.report.total == 10.0f);
  CHECK(bundle.total.item() == 10.0f);

  auto zeroed = total_loss(s(1), s(0), s(3), s(4), 0.3f);
  CHECK(bundle.report.total - zeroed.report.total == 2.0f);

  CHECK_THROWS_AS(
      total_loss(s(1), s(std::numeric_limits<float>::infinity()), s(3), s(4),
                 0.3f),
      NumericError);
  try {
    (void)total_loss(s(1), s(2), s(std::nanf("")), s(4), 0.3f);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("cht") != std::string::npos);
  }
}
