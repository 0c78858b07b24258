#pragma once

#include <vector>

#include "fcf/tensor.hpp"

namespace fcf {

/// Worker cap for parallel sections. Reads FCF_THREADS once; defaults to the
/// hardware count. Results are bit-identical for any value (fixed per-element
/// reduction order).
int max_threads();
void set_max_threads(int n);

Shape broadcast_shapes(const Shape& a, const Shape& b);

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);

/// Batched matrix product: (..., m, k) x (..., k, n) -> (..., m, n) with
/// broadcasting over the leading batch dims. Inputs must have rank >= 2.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::vector<int64_t> perm);
Tensor transpose_last2(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len);

/// Select rows along axis 0: out[i, ...] = a[idx[i], ...].
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor softmax(const Tensor& x, int64_t axis);
Tensor log_softmax(const Tensor& x, int64_t axis);

/// Normalizes the last axis to zero mean / unit variance (eps inside the
/// sqrt), then applies gain and bias. gain/bias extent must match the axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

/// Per-channel batch normalization over rows of x (R, C), gamma-only affine.
/// Training mode uses batch statistics and updates the running buffers in
/// place (EMA, `momentum` on the new batch); eval mode uses the buffers.
/// R == 1 in training mode is an error (undefined batch variance).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, Tensor& running_mean,
                  Tensor& running_var, bool training, float momentum = 0.1f,
                  float eps = 1e-5f);

/// Mean over rows of -log softmax(logits)[label]. logits (R, C).
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

/// Mean squared error over all elements; shapes must match exactly.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace fcf
