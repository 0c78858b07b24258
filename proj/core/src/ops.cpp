#include "fcf/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace fcf {

namespace {

std::atomic<int> g_max_threads{0};

int detect_threads() {
  if (const char* env = std::getenv("FCF_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

/// Splits [0, n) into contiguous chunks, one thread per chunk. Never splits
/// below `grain` items per thread.
template <typename F>
void parallel_for(int64_t n, int64_t grain, F&& fn) {
  int threads = max_threads();
  if (n <= 0) return;
  int64_t want = std::max<int64_t>(1, n / std::max<int64_t>(grain, 1));
  int t = static_cast<int>(std::min<int64_t>(threads, want));
  if (t <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(t));
  int64_t chunk = (n + t - 1) / t;
  for (int i = 0; i < t; ++i) {
    int64_t begin = i * chunk;
    int64_t end = std::min<int64_t>(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

Shape pad_to_rank(const Shape& s, size_t rank) {
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
  return out;
}

/// Strides of `in` viewed under `out` (after rank padding), 0 on broadcast
/// dims.
std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
  Shape padded = pad_to_rank(in, out.size());
  auto strides = row_major_strides(padded);
  for (size_t d = 0; d < out.size(); ++d) {
    if (padded[d] == 1 && out[d] != 1) strides[d] = 0;
  }
  return strides;
}

/// Visits every output element of a broadcast pair in row-major order,
/// yielding (flat out index, offset into a, offset into b).
template <typename F>
void for_each_bcast(const Shape& out, const std::vector<int64_t>& sa,
                    const std::vector<int64_t>& sb, F&& f) {
  const int64_t n = numel_of(out);
  const int64_t r = static_cast<int64_t>(out.size());
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (int64_t d = r - 1; d >= 0; --d) {
      ++idx[static_cast<size_t>(d)];
      oa += sa[static_cast<size_t>(d)];
      ob += sb[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
      oa -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      ob -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

void accumulate(detail::Node& parent, int64_t off, float v) {
  parent.grad[static_cast<size_t>(off)] += v;
}

struct Lanes {
  int64_t outer, extent, inner;
};

Lanes lanes_of(const Shape& s, int64_t axis) {
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d)
    inner *= s[d];
  return {outer, s[static_cast<size_t>(axis)], inner};
}

int64_t normalize_axis(int64_t axis, int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

using BinaryFwd = float (*)(float, float);

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 BinaryFwd fwd, void (*bwd)(detail::Node&, const Shape&,
                                            const std::vector<int64_t>&,
                                            const std::vector<int64_t>&)) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  auto sa = bcast_strides(a.shape(), out_shape);
  auto sb = bcast_strides(b.shape(), out_shape);
  std::vector<float> out(static_cast<size_t>(numel_of(out_shape)));
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for_each_bcast(out_shape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
    out[static_cast<size_t>(i)] =
        fwd(pa[static_cast<size_t>(oa)], pb[static_cast<size_t>(ob)]);
  });
  Shape captured = out_shape;
  return detail::make_op(
      name, std::move(out_shape), std::move(out), {a, b},
      [bwd, captured, sa = std::move(sa),
       sb = std::move(sb)](detail::Node& self) {
        bwd(self, captured, sa, sb);
      });
}

// c += a . b^T  with a (m, n), b (k, n) -> c (m, k)
void matmul2d_nt(const float* a, const float* b, float* c, int64_t m,
                 int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      float acc = 0.0f;
      const float* arow = a + i * n;
      const float* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + kk] += acc;
    }
  }
}

// c += a^T . b  with a (m, k), b (m, n) -> c (k, n)
void matmul2d_tn(const float* a, const float* b, float* c, int64_t m,
                 int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    const float* brow = b + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const float av = arow[kk];
      float* crow = c + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

int max_threads() {
  int v = g_max_threads.load();
  if (v == 0) {
    v = detect_threads();
    g_max_threads.store(v);
  }
  return v;
}

void set_max_threads(int n) { g_max_threads.store(std::max(1, n)); }

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape pa = pad_to_rank(a, rank), pb = pad_to_rank(b, rank);
  Shape out(rank);
  for (size_t d = 0; d < rank; ++d) {
    if (pa[d] == pb[d] || pb[d] == 1)
      out[d] = pa[d];
    else if (pa[d] == 1)
      out[d] = pb[d];
    else
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](float x, float y) { return x + y; },
      [](detail::Node& self, const Shape& out, const std::vector<int64_t>& sa,
         const std::vector<int64_t>& sb) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const float* g = self.grad.data();
        for_each_bcast(out, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          const float gi = g[static_cast<size_t>(i)];
          if (pa.requires_grad) accumulate(pa, oa, gi);
          if (pb.requires_grad) accumulate(pb, ob, gi);
        });
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](float x, float y) { return x - y; },
      [](detail::Node& self, const Shape& out, const std::vector<int64_t>& sa,
         const std::vector<int64_t>& sb) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const float* g = self.grad.data();
        for_each_bcast(out, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          const float gi = g[static_cast<size_t>(i)];
          if (pa.requires_grad) accumulate(pa, oa, gi);
          if (pb.requires_grad) accumulate(pb, ob, -gi);
        });
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](float x, float y) { return x * y; },
      [](detail::Node& self, const Shape& out, const std::vector<int64_t>& sa,
         const std::vector<int64_t>& sb) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const float* g = self.grad.data();
        const float* va = pa.value.data();
        const float* vb = pb.value.data();
        for_each_bcast(out, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          const float gi = g[static_cast<size_t>(i)];
          if (pa.requires_grad)
            accumulate(pa, oa, gi * vb[static_cast<size_t>(ob)]);
          if (pb.requires_grad)
            accumulate(pb, ob, gi * va[static_cast<size_t>(oa)]);
        });
      });
}

Tensor add_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return detail::make_op("add_scalar", a.shape(), std::move(out), {a},
                         [](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             p.grad[i] += self.grad[i];
                         });
}

Tensor mul_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return detail::make_op("mul_scalar", a.shape(), std::move(out), {a},
                         [s](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             p.grad[i] += s * self.grad[i];
                         });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2)
    throw ShapeError("matmul: inputs must have rank >= 2, got " +
                     shape_str(as) + " and " + shape_str(bs));
  const int64_t m = as[as.size() - 2];
  const int64_t k = as[as.size() - 1];
  const int64_t kb = bs[bs.size() - 2];
  const int64_t n = bs[bs.size() - 1];
  if (k != kb)
    throw ShapeError("matmul: inner extents disagree between " +
                     shape_str(as) + " and " + shape_str(bs));

  Shape abatch(as.begin(), as.end() - 2);
  Shape bbatch(bs.begin(), bs.end() - 2);
  Shape batch = broadcast_shapes(abatch, bbatch);
  const int64_t nbatch = numel_of(batch);

  // Per-batch base offsets into a and b (0-stride on broadcast dims).
  auto sa = bcast_strides(abatch, batch);
  auto sb = bcast_strides(bbatch, batch);
  for (auto& s : sa) s *= m * k;
  for (auto& s : sb) s *= k * n;
  std::vector<int64_t> offs_a(static_cast<size_t>(nbatch));
  std::vector<int64_t> offs_b(static_cast<size_t>(nbatch));
  for_each_bcast(batch, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
    offs_a[static_cast<size_t>(i)] = oa;
    offs_b[static_cast<size_t>(i)] = ob;
  });

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<float> out(static_cast<size_t>(nbatch * m * n), 0.0f);

  const float* pa = a.data().data();
  const float* pb = b.data().data();
  parallel_for(nbatch * m, /*grain=*/std::max<int64_t>(1, 32768 / (k * n + 1)),
               [&](int64_t begin, int64_t end) {
                 for (int64_t row = begin; row < end; ++row) {
                   const int64_t bi = row / m;
                   const int64_t i = row % m;
                   const float* arow =
                       pa + offs_a[static_cast<size_t>(bi)] + i * k;
                   float* crow = out.data() + bi * m * n + i * n;
                   for (int64_t kk = 0; kk < k; ++kk) {
                     const float av = arow[kk];
                     const float* brow =
                         pb + offs_b[static_cast<size_t>(bi)] + kk * n;
                     for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                   }
                 }
               });

  return detail::make_op(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [m, k, n, nbatch, offs_a = std::move(offs_a),
       offs_b = std::move(offs_b)](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const float* g = self.grad.data();
        for (int64_t bi = 0; bi < nbatch; ++bi) {
          const float* gslab = g + bi * m * n;
          const float* aval = pa.value.data() + offs_a[static_cast<size_t>(bi)];
          const float* bval = pb.value.data() + offs_b[static_cast<size_t>(bi)];
          if (pa.requires_grad)
            matmul2d_nt(gslab, bval,
                        pa.grad.data() + offs_a[static_cast<size_t>(bi)], m, n,
                        k);
          if (pb.requires_grad)
            matmul2d_tn(aval, gslab,
                        pb.grad.data() + offs_b[static_cast<size_t>(bi)], m, k,
                        n);
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  std::vector<float> out(a.data().begin(), a.data().end());
  return detail::make_op("reshape", std::move(shape), std::move(out), {a},
                         [](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             p.grad[i] += self.grad[i];
                         });
}

Tensor permute(const Tensor& a, std::vector<int64_t> perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size())
    throw ShapeError("permute: axis list rank mismatch for " + shape_str(s));
  Shape out_shape(s.size());
  for (size_t d = 0; d < perm.size(); ++d)
    out_shape[d] = s[static_cast<size_t>(perm[d])];

  auto in_strides = row_major_strides(s);
  std::vector<int64_t> gather_stride(perm.size());
  for (size_t d = 0; d < perm.size(); ++d)
    gather_stride[d] = in_strides[static_cast<size_t>(perm[d])];

  const int64_t n = a.numel();
  std::vector<float> out(static_cast<size_t>(n));
  std::vector<int64_t> src_of(static_cast<size_t>(n));
  const float* pa = a.data().data();
  {
    std::vector<int64_t> idx(out_shape.size(), 0);
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)] = pa[static_cast<size_t>(off)];
      src_of[static_cast<size_t>(i)] = off;
      for (int64_t d = static_cast<int64_t>(out_shape.size()) - 1; d >= 0;
           --d) {
        ++idx[static_cast<size_t>(d)];
        off += gather_stride[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)])
          break;
        off -= gather_stride[static_cast<size_t>(d)] *
               out_shape[static_cast<size_t>(d)];
        idx[static_cast<size_t>(d)] = 0;
      }
    }
  }
  return detail::make_op("permute", std::move(out_shape), std::move(out), {a},
                         [src_of = std::move(src_of)](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             p.grad[static_cast<size_t>(src_of[i])] +=
                                 self.grad[i];
                         });
}

Tensor transpose_last2(const Tensor& a) {
  std::vector<int64_t> perm(a.shape().size());
  for (size_t d = 0; d < perm.size(); ++d) perm[d] = static_cast<int64_t>(d);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, std::move(perm));
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw ValueError("concat: empty input list");
  const Shape& first = parts[0].shape();
  axis = normalize_axis(axis, static_cast<int64_t>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size())
      throw ShapeError("concat: rank mismatch between " + shape_str(first) +
                       " and " + shape_str(s));
    for (size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int64_t>(d) != axis && s[d] != first[d])
        throw ShapeError("concat: extent mismatch between " +
                         shape_str(first) + " and " + shape_str(s));
    }
    out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }

  auto ln = lanes_of(out_shape, axis);
  std::vector<float> out(static_cast<size_t>(numel_of(out_shape)));
  std::vector<int64_t> extents;
  extents.reserve(parts.size());
  int64_t cursor = 0;
  for (const auto& p : parts) {
    const int64_t ext = p.shape()[static_cast<size_t>(axis)];
    const float* src = p.data().data();
    for (int64_t o = 0; o < ln.outer; ++o) {
      std::copy(src + o * ext * ln.inner, src + (o + 1) * ext * ln.inner,
                out.begin() + o * ln.extent * ln.inner + cursor * ln.inner);
    }
    extents.push_back(ext);
    cursor += ext;
  }

  return detail::make_op(
      "concat", std::move(out_shape), std::move(out), parts,
      [ln, extents = std::move(extents)](detail::Node& self) {
        int64_t cursor = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
          auto& p = *self.parents[pi];
          const int64_t ext = extents[pi];
          if (p.requires_grad) {
            p.ensure_grad();
            for (int64_t o = 0; o < ln.outer; ++o) {
              const float* g =
                  self.grad.data() + o * ln.extent * ln.inner + cursor * ln.inner;
              float* dst = p.grad.data() + o * ext * ln.inner;
              for (int64_t i = 0; i < ext * ln.inner; ++i) dst[i] += g[i];
            }
          }
          cursor += ext;
        }
      });
}

Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len) {
  const Shape& s = a.shape();
  axis = normalize_axis(axis, static_cast<int64_t>(s.size()), "slice");
  if (start < 0 || len < 0 || start + len > s[static_cast<size_t>(axis)])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for " +
                     shape_str(s));
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = len;
  auto ln = lanes_of(s, axis);
  std::vector<float> out(static_cast<size_t>(numel_of(out_shape)));
  const float* src = a.data().data();
  for (int64_t o = 0; o < ln.outer; ++o) {
    std::copy(src + (o * ln.extent + start) * ln.inner,
              src + (o * ln.extent + start + len) * ln.inner,
              out.begin() + o * len * ln.inner);
  }
  return detail::make_op(
      "slice", std::move(out_shape), std::move(out), {a},
      [ln, start, len](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int64_t o = 0; o < ln.outer; ++o) {
          const float* g = self.grad.data() + o * len * ln.inner;
          float* dst = p.grad.data() + (o * ln.extent + start) * ln.inner;
          for (int64_t i = 0; i < len * ln.inner; ++i) dst[i] += g[i];
        }
      });
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("gather_rows: rank-0 input");
  const int64_t rows = s[0];
  const int64_t rowlen = a.numel() / std::max<int64_t>(rows, 1);
  for (int64_t i : idx) {
    if (i < 0 || i >= rows)
      throw ShapeError("gather_rows: index " + std::to_string(i) +
                       " out of range for " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[0] = static_cast<int64_t>(idx.size());
  std::vector<float> out(static_cast<size_t>(rowlen) * idx.size());
  const float* src = a.data().data();
  for (size_t i = 0; i < idx.size(); ++i) {
    std::copy(src + idx[i] * rowlen, src + (idx[i] + 1) * rowlen,
              out.begin() + static_cast<int64_t>(i) * rowlen);
  }
  return detail::make_op("gather_rows", std::move(out_shape), std::move(out),
                         {a}, [idx, rowlen](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (size_t i = 0; i < idx.size(); ++i) {
                             const float* g = self.grad.data() +
                                              static_cast<int64_t>(i) * rowlen;
                             float* dst = p.grad.data() + idx[i] * rowlen;
                             for (int64_t j = 0; j < rowlen; ++j)
                               dst[j] += g[j];
                           }
                         });
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return detail::make_op("sum_all", {1}, {static_cast<float>(acc)}, {a},
                         [](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           const float g = self.grad[0];
                           for (auto& v : p.grad) v += g;
                         });
}

Tensor mean_all(const Tensor& a) {
  const int64_t n = a.numel();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return detail::make_op(
      "mean_all", {1}, {static_cast<float>(acc / static_cast<double>(n))}, {a},
      [n](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const float g = self.grad[0] / static_cast<float>(n);
        for (auto& v : p.grad) v += g;
      });
}

Tensor relu(const Tensor& a) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  return detail::make_op("relu", a.shape(), std::move(out), {a},
                         [](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             if (p.value[i] > 0.0f) p.grad[i] += self.grad[i];
                           }
                         });
}

Tensor gelu(const Tensor& a) {
  constexpr float kInvSqrt2 = 0.70710678118654752440f;
  constexpr float kInvSqrt2Pi = 0.39894228040143267794f;
  std::vector<float> out(a.data().size());
  const float* pa = a.data().data();
  for (size_t i = 0; i < out.size(); ++i) {
    const float x = pa[i];
    out[i] = 0.5f * x * (1.0f + std::erf(x * kInvSqrt2));
  }
  return detail::make_op(
      "gelu", a.shape(), std::move(out), {a}, [=](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
          const float x = p.value[i];
          const float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
          const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
          p.grad[i] += self.grad[i] * (cdf + x * pdf);
        }
      });
}

Tensor softmax(const Tensor& x, int64_t axis) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, static_cast<int64_t>(s.size()), "softmax");
  auto ln = lanes_of(s, axis);
  std::vector<float> out(x.data().size());
  const float* px = x.data().data();
  for (int64_t o = 0; o < ln.outer; ++o) {
    for (int64_t in = 0; in < ln.inner; ++in) {
      const int64_t base = o * ln.extent * ln.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t l = 0; l < ln.extent; ++l)
        mx = std::max(mx, px[base + l * ln.inner]);
      double denom = 0.0;
      for (int64_t l = 0; l < ln.extent; ++l) {
        const float e = std::exp(px[base + l * ln.inner] - mx);
        out[static_cast<size_t>(base + l * ln.inner)] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int64_t l = 0; l < ln.extent; ++l)
        out[static_cast<size_t>(base + l * ln.inner)] *= inv;
    }
  }
  return detail::make_op(
      "softmax", s, std::move(out), {x}, [ln](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const float* y = self.value.data();
        const float* g = self.grad.data();
        for (int64_t o = 0; o < ln.outer; ++o) {
          for (int64_t in = 0; in < ln.inner; ++in) {
            const int64_t base = o * ln.extent * ln.inner + in;
            double dot = 0.0;
            for (int64_t l = 0; l < ln.extent; ++l) {
              const int64_t k = base + l * ln.inner;
              dot += static_cast<double>(g[k]) * y[k];
            }
            for (int64_t l = 0; l < ln.extent; ++l) {
              const int64_t k = base + l * ln.inner;
              p.grad[static_cast<size_t>(k)] +=
                  y[k] * (g[k] - static_cast<float>(dot));
            }
          }
        }
      });
}

Tensor log_softmax(const Tensor& x, int64_t axis) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, static_cast<int64_t>(s.size()), "log_softmax");
  auto ln = lanes_of(s, axis);
  std::vector<float> out(x.data().size());
  const float* px = x.data().data();
  for (int64_t o = 0; o < ln.outer; ++o) {
    for (int64_t in = 0; in < ln.inner; ++in) {
      const int64_t base = o * ln.extent * ln.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t l = 0; l < ln.extent; ++l)
        mx = std::max(mx, px[base + l * ln.inner]);
      double denom = 0.0;
      for (int64_t l = 0; l < ln.extent; ++l)
        denom += std::exp(px[base + l * ln.inner] - mx);
      const float lse = mx + static_cast<float>(std::log(denom));
      for (int64_t l = 0; l < ln.extent; ++l) {
        const int64_t k = base + l * ln.inner;
        out[static_cast<size_t>(k)] = px[k] - lse;
      }
    }
  }
  return detail::make_op(
      "log_softmax", s, std::move(out), {x}, [ln](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const float* y = self.value.data();  // log-probabilities
        const float* g = self.grad.data();
        for (int64_t o = 0; o < ln.outer; ++o) {
          for (int64_t in = 0; in < ln.inner; ++in) {
            const int64_t base = o * ln.extent * ln.inner + in;
            double gsum = 0.0;
            for (int64_t l = 0; l < ln.extent; ++l)
              gsum += g[base + l * ln.inner];
            for (int64_t l = 0; l < ln.extent; ++l) {
              const int64_t k = base + l * ln.inner;
              p.grad[static_cast<size_t>(k)] +=
                  g[k] - static_cast<float>(gsum) * std::exp(y[k]);
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("layer_norm: rank-0 input");
  const int64_t c = s.back();
  if (gain.numel() != c || bias.numel() != c)
    throw ShapeError("layer_norm: gain/bias extent must equal last axis of " +
                     shape_str(s));
  const int64_t rows = x.numel() / c;
  std::vector<float> out(x.data().size());
  std::vector<float> mus(static_cast<size_t>(rows));
  std::vector<float> inv_stds(static_cast<size_t>(rows));
  const float* px = x.data().data();
  const float* pg = gain.data().data();
  const float* pb = bias.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = px + r * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
    mus[static_cast<size_t>(r)] = static_cast<float>(mu);
    inv_stds[static_cast<size_t>(r)] = inv_std;
    float* orow = out.data() + r * c;
    for (int64_t j = 0; j < c; ++j) {
      const float xhat = (row[j] - static_cast<float>(mu)) * inv_std;
      orow[j] = pg[j] * xhat + pb[j];
    }
  }
  return detail::make_op(
      "layer_norm", s, std::move(out), {x, gain, bias},
      [c, rows, mus = std::move(mus),
       inv_stds = std::move(inv_stds)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const float* g = self.grad.data();
        const float* xv = px.value.data();
        const float* gv = pg.value.data();
        for (int64_t r = 0; r < rows; ++r) {
          const float mu = mus[static_cast<size_t>(r)];
          const float inv_std = inv_stds[static_cast<size_t>(r)];
          const float* grow = g + r * c;
          const float* xrow = xv + r * c;
          // dxhat = g * gain; accumulate the two row sums first.
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            const float xhat = (xrow[j] - mu) * inv_std;
            const float dxhat = grow[j] * gv[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
          }
          for (int64_t j = 0; j < c; ++j) {
            const float xhat = (xrow[j] - mu) * inv_std;
            const float dxhat = grow[j] * gv[j];
            if (px.requires_grad) {
              const float dx =
                  inv_std *
                  (dxhat -
                   static_cast<float>(sum_dxhat) / static_cast<float>(c) -
                   xhat * static_cast<float>(sum_dxhat_xhat) /
                       static_cast<float>(c));
              px.grad[static_cast<size_t>(r * c + j)] += dx;
            }
            if (pg.requires_grad)
              pg.grad[static_cast<size_t>(j)] += grow[j] * xhat;
            if (pb.requires_grad) pb.grad[static_cast<size_t>(j)] += grow[j];
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, Tensor& running_mean,
                  Tensor& running_var, bool training, float momentum,
                  float eps) {
  const Shape& s = x.shape();
  if (s.size() != 2)
    throw ShapeError("batch_norm: expected (rows, channels), got " +
                     shape_str(s));
  const int64_t rows = s[0], c = s[1];
  if (gamma.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c)
    throw ShapeError("batch_norm: channel extent mismatch for " +
                     shape_str(s));
  if (training && rows < 2)
    throw ValueError(
        "batch_norm: training mode needs at least 2 rows (batch variance "
        "undefined)");

  std::vector<float> mu(static_cast<size_t>(c), 0.0f);
  std::vector<float> var(static_cast<size_t>(c), 0.0f);
  const float* px = x.data().data();
  if (training) {
    for (int64_t j = 0; j < c; ++j) {
      double m = 0.0;
      for (int64_t r = 0; r < rows; ++r) m += px[r * c + j];
      m /= static_cast<double>(rows);
      double v = 0.0;
      for (int64_t r = 0; r < rows; ++r) {
        const double d = px[r * c + j] - m;
        v += d * d;
      }
      v /= static_cast<double>(rows);
      mu[static_cast<size_t>(j)] = static_cast<float>(m);
      var[static_cast<size_t>(j)] = static_cast<float>(v);
    }
    // EMA update with biased batch statistics.
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (int64_t j = 0; j < c; ++j) {
      rm[static_cast<size_t>(j)] =
          (1.0f - momentum) * rm[static_cast<size_t>(j)] +
          momentum * mu[static_cast<size_t>(j)];
      rv[static_cast<size_t>(j)] =
          (1.0f - momentum) * rv[static_cast<size_t>(j)] +
          momentum * var[static_cast<size_t>(j)];
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    std::copy(rm.begin(), rm.end(), mu.begin());
    std::copy(rv.begin(), rv.end(), var.begin());
  }

  std::vector<float> inv_std(static_cast<size_t>(c));
  for (int64_t j = 0; j < c; ++j)
    inv_std[static_cast<size_t>(j)] =
        1.0f / std::sqrt(var[static_cast<size_t>(j)] + eps);

  std::vector<float> out(x.data().size());
  const float* pg = gamma.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < c; ++j) {
      const float xhat = (px[r * c + j] - mu[static_cast<size_t>(j)]) *
                         inv_std[static_cast<size_t>(j)];
      out[static_cast<size_t>(r * c + j)] = pg[j] * xhat;
    }
  }

  return detail::make_op(
      "batch_norm", s, std::move(out), {x, gamma},
      [rows, c, training, mu = std::move(mu),
       inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        const float* g = self.grad.data();
        const float* xv = px.value.data();
        const float* gv = pg.value.data();
        for (int64_t j = 0; j < c; ++j) {
          const float m = mu[static_cast<size_t>(j)];
          const float is = inv_std[static_cast<size_t>(j)];
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int64_t r = 0; r < rows; ++r) {
            const float xhat = (xv[r * c + j] - m) * is;
            const float dxhat = g[r * c + j] * gv[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
            if (pg.requires_grad)
              pg.grad[static_cast<size_t>(j)] += g[r * c + j] * xhat;
          }
          if (!px.requires_grad) continue;
          if (training) {
            for (int64_t r = 0; r < rows; ++r) {
              const float xhat = (xv[r * c + j] - m) * is;
              const float dxhat = g[r * c + j] * gv[j];
              const float dx =
                  is * (dxhat -
                        static_cast<float>(sum_dxhat) /
                            static_cast<float>(rows) -
                        xhat * static_cast<float>(sum_dxhat_xhat) /
                            static_cast<float>(rows));
              px.grad[static_cast<size_t>(r * c + j)] += dx;
            }
          } else {
            // Running statistics are constants in eval mode.
            for (int64_t r = 0; r < rows; ++r)
              px.grad[static_cast<size_t>(r * c + j)] +=
                  g[r * c + j] * gv[j] * is;
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits,
                     const std::vector<int64_t>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2)
    throw ShapeError("cross_entropy: expected (rows, classes), got " +
                     shape_str(s));
  const int64_t rows = s[0], c = s[1];
  if (static_cast<int64_t>(labels.size()) != rows)
    throw ShapeError("cross_entropy: label count " +
                     std::to_string(labels.size()) + " != rows " +
                     std::to_string(rows));
  for (int64_t y : labels) {
    if (y < 0 || y >= c)
      throw ValueError("cross_entropy: label " + std::to_string(y) +
                       " out of range [0," + std::to_string(c) + ")");
  }
  const float* px = logits.data().data();
  std::vector<float> probs(logits.data().size());
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = px + r * c;
    float mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const float e = std::exp(row[j] - mx);
      probs[static_cast<size_t>(r * c + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < c; ++j)
      probs[static_cast<size_t>(r * c + j)] /= static_cast<float>(denom);
    loss -= (static_cast<double>(row[labels[static_cast<size_t>(r)]]) - mx -
             std::log(denom));
  }
  loss /= static_cast<double>(rows);
  return detail::make_op(
      "cross_entropy", {1}, {static_cast<float>(loss)}, {logits},
      [rows, c, labels, probs = std::move(probs)](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const float g = self.grad[0] / static_cast<float>(rows);
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < c; ++j) {
            float d = probs[static_cast<size_t>(r * c + j)];
            if (j == labels[static_cast<size_t>(r)]) d -= 1.0f;
            p.grad[static_cast<size_t>(r * c + j)] += g * d;
          }
        }
      });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mse: shape mismatch between " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const int64_t n = a.numel();
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  return detail::make_op(
      "mse", {1}, {static_cast<float>(acc / static_cast<double>(n))}, {a, b},
      [n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const float g = self.grad[0] * 2.0f / static_cast<float>(n);
        for (int64_t i = 0; i < n; ++i) {
      const float d = pa.value[static_cast<size_t>(i)] -
                      pb.value[static_cast<size_t>(i)];
          if (pa.requires_grad) pa.grad[static_cast<size_t>(i)] += g * d;
          if (pb.requires_grad) pb.grad[static_cast<size_t>(i)] -= g * d;
        }
      });
}

}  // namespace fcf
