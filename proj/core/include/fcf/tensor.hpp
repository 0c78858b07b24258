#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fcf/errors.hpp"
#include "fcf/random.hpp"

namespace fcf {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<int64_t> row_major_strides(const Shape& shape);

/// When enabled, every op forward scans its output and throws NumericError on
/// NaN/Inf instead of letting it propagate. Process-global; tests turn it on.
void set_check_finite(bool enabled);
bool check_finite_enabled();

/// Whether ops record backward closures. Off inside NoGradGuard scopes.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grads. Empty for leaves.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
  }
};

}  // namespace detail

/// Dense row-major f32 tensor; a cheap shared handle onto one graph node.
/// Values are immutable once the tensor participates in a recorded graph;
/// mutable_data() is for leaf initialization and module-owned buffers only.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f,
                      bool requires_grad = false);
  static Tensor scalar(float v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  int64_t extent(int64_t axis) const;
  int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool v);

  /// Gradient accumulated by backward(); empty span until then.
  std::span<const float> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from a scalar; accumulates into requires_grad leaves.
  void backward();

  /// Same values, detached from the recorded graph; never requires grad.
  Tensor detach() const;

  /// Deep value copy with no graph history.
  Tensor clone() const;

  float item() const;
  float at(std::initializer_list<int64_t> idx) const;

  const char* op_name() const;

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Op constructor used by everything in ops.cpp: wires parents and the
/// backward closure only when some input needs gradients.
Tensor make_op(const char* op, Shape shape, std::vector<float> value,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backward);

void check_value_finite(const char* op, std::span<const float> value);

}  // namespace detail

}  // namespace fcf
