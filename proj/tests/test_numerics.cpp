#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fcf/checkpoint.hpp"
#include "fcf/gradcheck.hpp"
#include "fcf/nn.hpp"
#include "fcf/ops.hpp"

using namespace fcf;

namespace {

Tensor t2(std::vector<float> v, Shape s, bool rg = false) {
  return Tensor::from_data(std::move(s), std::move(v), rg);
}

bool allclose(std::span<const float> a, std::span<const float> b,
              float atol = 1e-6f) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > atol) return false;
  return true;
}

bool bitexact(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Runs the finite-difference oracle over a scalar function of the listed
// parameters.
GradCheckReport check_fn(std::function<Tensor()> f,
                         std::vector<std::pair<std::string, Tensor>> params,
                         double h = 1e-3, double tol = 1e-2) {
  GradCheckTask task{std::move(f), std::move(params)};
  return grad_check(task, h, tol, /*max_per_param=*/256, /*seed=*/17);
}

}  // namespace

TEST_CASE("matmul identity and hand case") {
  Tensor id = t2({1, 0, 0, 1}, {2, 2});
  Tensor v = t2({3, 4}, {2, 1});
  Tensor r = matmul(id, v);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.at({0, 0}) == 3.0f);
  CHECK(r.at({1, 0}) == 4.0f);

  Tensor a = t2({1, 2}, {1, 2});
  Tensor b = t2({3, 4}, {2, 1});
  CHECK(matmul(a, b).item() == 11.0f);
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul backward matches finite differences (4x5 by 5x3)") {
  Rng rng(42);
  Tensor a = Tensor::randn({4, 5}, rng, 1.0f, true);
  Tensor b = Tensor::randn({5, 3}, rng, 1.0f, true);
  auto rep = check_fn([&] { return sum_all(matmul(a, b)); },
                      {{"a", a}, {"b", b}}, 1e-3, 1e-3);
  CHECK_MESSAGE(rep.ok(), rep.summary());
}

TEST_CASE("matmul batched broadcast against per-slice loops") {
  Rng rng(7);
  Tensor a = Tensor::randn({2, 3, 4, 5}, rng);
  Tensor b = Tensor::randn({1, 3, 5, 6}, rng);
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 4, 6});
  for (int64_t b0 = 0; b0 < 2; ++b0)
    for (int64_t b1 = 0; b1 < 3; ++b1)
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 6; ++j) {
          float acc = 0;
          for (int64_t k = 0; k < 5; ++k)
            acc += a.at({b0, b1, i, k}) * b.at({0, b1, k, j});
          CHECK(c.at({b0, b1, i, j}) == doctest::Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("matmul associativity on well-conditioned inputs") {
  Rng rng(3);
  Tensor a = Tensor::randn({6, 6}, rng, 0.5f);
  Tensor b = Tensor::randn({6, 6}, rng, 0.5f);
  Tensor c = Tensor::randn({6, 6}, rng, 0.5f);
  Tensor left = matmul(matmul(a, b), c);
  Tensor right = matmul(a, matmul(b, c));
  for (int64_t i = 0; i < left.numel(); ++i) {
    float l = left.data()[i], r = right.data()[i];
    CHECK(std::abs(l - r) / std::max(1.0f, std::abs(r)) < 1e-4f);
  }
}

TEST_CASE("matmul identical across thread counts") {
  Rng rng(11);
  Tensor a = Tensor::randn({128, 96}, rng);
  Tensor b = Tensor::randn({96, 64}, rng);
  set_max_threads(1);
  Tensor c1 = matmul(a, b);
  set_max_threads(4);
  Tensor c4 = matmul(a, b);
  set_max_threads(1);
  CHECK(bitexact(c1.data(), c4.data()));
}

TEST_CASE("softmax basics") {
  CHECK(allclose(softmax(t2({0, 0}, {2}), 0).data(),
                 std::vector<float>{0.5f, 0.5f}));
  CHECK(allclose(softmax(t2({1000, 1000}, {2}), 0).data(),
                 std::vector<float>{0.5f, 0.5f}));
  // [0, ln 3] -> [1/4, 3/4]
  Tensor s = softmax(t2({0.0f, std::log(3.0f)}, {2}), 0);
  CHECK(s.data()[0] == doctest::Approx(0.25f).epsilon(1e-6));
  CHECK(s.data()[1] == doctest::Approx(0.75f).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = Tensor::randn({3, 7}, rng, 1e4f / 3.0f);
    Tensor y = softmax(x, -1);
    for (int64_t r = 0; r < 3; ++r) {
      double sum = 0;
      for (int64_t j = 0; j < 7; ++j) sum += y.at({r, j});
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    Tensor shifted = softmax(add_scalar(x, 123.5f), -1);
    CHECK(allclose(y.data(), shifted.data(), 1e-6f));
  }
}

TEST_CASE("layer_norm hand cases") {
  Tensor gain = Tensor::full({2}, 1.0f);
  Tensor bias = Tensor::zeros({2});
  Tensor c = layer_norm(t2({5, 5}, {1, 2}), gain, bias);
  CHECK(std::abs(c.data()[0]) < 1e-3f);
  CHECK(std::abs(c.data()[1]) < 1e-3f);

  // [1,3]: mean 2, population std 1 -> [-1, 1]
  Tensor y = layer_norm(t2({1, 3}, {1, 2}), gain, bias);
  CHECK(y.data()[0] == doctest::Approx(-1.0f).epsilon(1e-3));
  CHECK(y.data()[1] == doctest::Approx(1.0f).epsilon(1e-3));
}

TEST_CASE("layer_norm pre-affine mean/variance") {
  Rng rng(9);
  Tensor x = Tensor::randn({4, 16}, rng, 3.0f);
  Tensor y = layer_norm(x, Tensor::full({16}, 1.0f), Tensor::zeros({16}));
  for (int64_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (int64_t j = 0; j < 16; ++j) mu += y.at({r, j});
    mu /= 16;
    for (int64_t j = 0; j < 16; ++j) {
      double d = y.at({r, j}) - mu;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mu) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-2);
  }
}

TEST_CASE("grad_check on w^2 at w=3") {
  Tensor w = t2({3.0f}, {1}, true);
  GradCheckTask task{[&] { return sum_all(mul(w, w)); }, {{"w", w}}};
  auto rep = grad_check(task, 1e-3, 1e-2, 64, 0);
  CHECK(rep.ok());
  // analytic 6, numeric 6 within 1e-5 relative
  Tensor loss = task.loss();
  w.zero_grad();
  loss.backward();
  CHECK(w.grad()[0] == doctest::Approx(6.0f).epsilon(1e-5));
}

TEST_CASE("grad_check flags a corrupted backward and names the parameter") {
  Tensor w = Tensor::from_data({4}, {0.3f, -0.7f, 1.2f, 0.4f}, true);
  // Op with a deliberate sign flip in its backward.
  auto bad_square = [&]() {
    std::vector<float> out(w.data().begin(), w.data().end());
    for (auto& v : out) v = v * v;
    return detail::make_op("bad_square", w.shape(), std::move(out), {w},
                           [](detail::Node& self) {
                             auto& p = *self.parents[0];
                             p.ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i)
                               p.grad[i] += -2.0f * p.value[i] * self.grad[i];
                           });
  };
  GradCheckTask task{[&] { return sum_all(bad_square()); },
                     {{"stream.bad.weight", w}}};
  auto rep = grad_check(task, 1e-3, 1e-2, 64, 0);
  CHECK_FALSE(rep.ok());
  REQUIRE_FALSE(rep.failures.empty());
  CHECK(rep.failures[0].param == "stream.bad.weight");
}

TEST_CASE("every differentiable op passes grad_check on random shapes") {
  Rng rng(123);
  auto weighted = [&](Tensor y) {
    // Random fixed weighting makes the output gradient non-uniform.
    Rng wr(99);
    Tensor w = Tensor::randn(y.shape(), wr);
    return sum_all(mul(y, w));
  };

  SUBCASE("elementwise, broadcast") {
    Tensor a = Tensor::randn({3, 4, 5}, rng, 1.0f, true);
    Tensor b = Tensor::randn({4, 1}, rng, 1.0f, true);
    for (auto op : {0, 1, 2}) {
      auto f = [&, op] {
        Tensor y = op == 0 ? add(a, b) : op == 1 ? sub(a, b) : mul(a, b);
        return weighted(y);
      };
      auto rep = check_fn(f, {{"a", a}, {"b", b}});
      CHECK_MESSAGE(rep.ok(), rep.summary());
    }
  }
  SUBCASE("matmul batched") {
    Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0f, true);
    Tensor b = Tensor::randn({2, 4, 5}, rng, 1.0f, true);
    auto rep = check_fn([&] { return weighted(matmul(a, b)); },
                        {{"a", a}, {"b", b}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
  }
  SUBCASE("matmul broadcast batch") {
    Tensor a = Tensor::randn({4, 6}, rng, 1.0f, true);
    Tensor b = Tensor::randn({3, 6, 2}, rng, 1.0f, true);
    auto rep = check_fn([&] { return weighted(matmul(a, b)); },
                        {{"a", a}, {"b", b}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
  }
  SUBCASE("shape ops") {
    Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0f, true);
    auto rep = check_fn(
        [&] { return weighted(reshape(permute(a, {2, 0, 1}), {4, 6})); },
        {{"a", a}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
  }
  SUBCASE("concat and slice") {
    Tensor a = Tensor::randn({2, 3}, rng, 1.0f, true);
    Tensor b = Tensor::randn({2, 2}, rng, 1.0f, true);
    auto rep = check_fn(
        [&] { return weighted(slice(concat({a, b}, 1), 1, 1, 3)); },
        {{"a", a}, {"b", b}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
  }
  SUBCASE("gather_rows") {
    Tensor a = Tensor::randn({5, 3}, rng, 1.0f, true);
    auto rep = check_fn(
        [&] { return weighted(gather_rows(a, {4, 0, 0, 2})); }, {{"a", a}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
  }
  SUBCASE("activations and norms") {
    Tensor a = Tensor::randn({3, 8}, rng, 1.0f, true);
    Tensor gain = Tensor::randn({8}, rng, 0.2f, true);
    Tensor bias = Tensor::randn({8}, rng, 0.2f, true);
    auto rep = check_fn([&] { return weighted(gelu(a)); }, {{"a", a}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
    rep = check_fn([&] { return weighted(softmax(a, -1)); }, {{"a", a}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
    rep = check_fn([&] { return weighted(softmax(a, 0)); }, {{"a", a}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
    rep = check_fn([&] { return weighted(log_softmax(a, -1)); }, {{"a", a}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
    rep = check_fn([&] { return weighted(layer_norm(a, gain, bias)); },
                   {{"a", a}, {"gain", gain}, {"bias", bias}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
  }
  SUBCASE("batch_norm train and eval") {
    Tensor a = Tensor::randn({6, 4}, rng, 1.0f, true);
    Tensor gamma = Tensor::randn({4}, rng, 0.2f, true);
    for (bool training : {true, false}) {
      auto rep = check_fn(
          [&, training] {
            Tensor rm = Tensor::zeros({4});
            Tensor rv = Tensor::full({4}, 1.0f);
            return weighted(batch_norm(a, gamma, rm, rv, training));
          },
          {{"a", a}, {"gamma", gamma}});
      CHECK_MESSAGE(rep.ok(), rep.summary());
    }
  }
  SUBCASE("losses") {
    Tensor logits = Tensor::randn({6, 5}, rng, 1.0f, true);
    std::vector<int64_t> labels{0, 2, 4, 1, 1, 3};
    auto rep = check_fn([&] { return cross_entropy(logits, labels); },
                        {{"logits", logits}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
    Tensor a = Tensor::randn({3, 4}, rng, 1.0f, true);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0f, true);
    rep = check_fn([&] { return mse(a, b); }, {{"a", a}, {"b", b}});
    CHECK_MESSAGE(rep.ok(), rep.summary());
  }
}

TEST_CASE("cross_entropy uniform logits over 8 classes is ln 8") {
  Tensor logits = Tensor::zeros({3, 8});
  Tensor l = cross_entropy(logits, {0, 5, 7});
  CHECK(l.item() == doctest::Approx(std::log(8.0f)).epsilon(1e-6));
}

TEST_CASE("finite check mode raises on NaN") {
  set_check_finite(true);
  Tensor a = t2({1.0f, -1.0f}, {2});
  Tensor nanv = t2({std::numeric_limits<float>::quiet_NaN(), 0.0f}, {2});
  CHECK_THROWS_AS((void)add(a, nanv), NumericError);
  set_check_finite(false);
  CHECK_NOTHROW((void)add(a, nanv));
}

TEST_CASE("forward is bit-identical across runs with a fixed seed") {
  auto run = [] {
    Rng rng(1234);
    Tensor a = Tensor::randn({8, 8}, rng, 1.0f);
    Tensor b = Tensor::randn({8, 8}, rng, 1.0f);
    Tensor y = softmax(matmul(gelu(a), b), -1);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(bitexact(r1, r2));
}

TEST_CASE("gradient accumulates across two backward passes") {
  Tensor w = t2({2.0f}, {1}, true);
  Tensor l1 = sum_all(mul(w, w));
  l1.backward();
  Tensor l2 = sum_all(mul_scalar(w, 3.0f));
  l2.backward();
  CHECK(w.grad()[0] == doctest::Approx(4.0f + 3.0f));
  w.zero_grad();
  CHECK(w.grad().empty());
}

TEST_CASE("detach blocks gradient flow") {
  Tensor w = t2({2.0f}, {1}, true);
  Tensor y = mul(w.detach(), w);  // d/dw should be w.detach() == 2, not 2w
  sum_all(y).backward();
  CHECK(w.grad()[0] == doctest::Approx(2.0f));
}

TEST_CASE("NoGradGuard suppresses recording") {
  Tensor w = t2({2.0f}, {1}, true);
  NoGradGuard ng;
  Tensor y = mul(w, w);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(77);
  std::vector<std::pair<std::string, Tensor>> named;
  named.emplace_back("encoder.patch.weight", Tensor::randn({12, 7}, rng));
  named.emplace_back("fcd.t_c", Tensor::randn({1, 4, 8}, rng));
  named.emplace_back("bnneck.holistic.running_var",
                     Tensor::full({8}, 0.37f));

  auto path = std::filesystem::temp_directory_path() / "fcf_test_ckpt.fcf";
  save_tensors(path, named);
  auto loaded = load_tensors(path);
  REQUIRE(loaded.size() == named.size());
  for (const auto& [name, t] : named) {
    REQUIRE(loaded.count(name) == 1);
    CHECK(loaded.at(name).shape() == t.shape());
    CHECK(bitexact(loaded.at(name).data(), t.data()));
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects bad magic") {
  auto path = std::filesystem::temp_directory_path() / "fcf_bad_magic.fcf";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE12345678";
  }
  CHECK_THROWS_AS((void)load_tensors(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("sgd with zero lr leaves parameters unchanged") {
  Rng rng(5);
  ParamRegistry reg;
  Tensor w = Tensor::randn({4}, rng, 1.0f, true);
  reg.add_param("w", w);
  std::vector<float> before(w.data().begin(), w.data().end());
  sum_all(mul(w, w)).backward();
  Sgd opt;
  opt.step(reg, 0.0f);
  CHECK(bitexact(before, w.data()));
}

TEST_CASE("param registry rejects duplicate names") {
  ParamRegistry reg;
  Tensor w = Tensor::zeros({1}, true);
  reg.add_param("w", w);
  CHECK_THROWS_AS(reg.add_param("w", w), ValueError);
}
