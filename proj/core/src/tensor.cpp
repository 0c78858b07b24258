#include "fcf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace fcf {

namespace {
std::atomic<bool> g_check_finite{false};
thread_local bool t_grad_enabled = true;
}  // namespace

void set_check_finite(bool enabled) { g_check_finite.store(enabled); }
bool check_finite_enabled() { return g_check_finite.load(); }
bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value.assign(static_cast<size_t>(numel_of(shape)), v);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                         bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("from_data: payload length " +
                     std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
  std::vector<float> data(static_cast<size_t>(numel_of(shape)));
  for (auto& v : data) v = static_cast<float>(rng.normal(0.0, stddev));
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(float v) { return from_data({1}, {v}); }

const Shape& Tensor::shape() const {
  if (!node_) throw ValueError("operation on undefined tensor");
  return node_->shape;
}

int64_t Tensor::extent(int64_t axis) const {
  const auto& s = shape();
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return numel_of(shape()); }

std::span<const float> Tensor::data() const {
  if (!node_) throw ValueError("operation on undefined tensor");
  return node_->value;
}

std::span<float> Tensor::mutable_data() {
  if (!node_) throw ValueError("operation on undefined tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw ValueError("operation on undefined tensor");
  node_->requires_grad = v;
}

std::span<const float> Tensor::grad() const {
  if (!node_) throw ValueError("operation on undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = false;
  node->op = "detach";
  return wrap(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

float Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() requires a single-element tensor, got " +
                     shape_str(shape()));
  return node_->value[0];
}

float Tensor::at(std::initializer_list<int64_t> idx) const {
  const auto& s = shape();
  if (idx.size() != s.size())
    throw ShapeError("at(): index rank mismatch for " + shape_str(s));
  auto strides = row_major_strides(s);
  int64_t off = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[d]) throw ShapeError("at(): index out of range");
    off += i * strides[d++];
  }
  return node_->value[static_cast<size_t>(off)];
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

void Tensor::backward() {
  if (!node_) throw ValueError("backward() on undefined tensor");
  if (numel() != 1)
    throw ShapeError("backward() requires a scalar root, got " +
                     shape_str(shape()));
  if (!node_->requires_grad)
    throw ValueError("backward() on a tensor that does not require grad");

  // Post-order DFS: children appear after all of their parents' subtrees,
  // so iterating the order in reverse propagates root-first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

namespace detail {

void check_value_finite(const char* op, std::span<const float> value) {
  if (!check_finite_enabled()) return;
  for (float v : value) {
    if (!std::isfinite(v))
      throw NumericError(std::string("op '") + op +
                         "' produced a non-finite value");
  }
}

Tensor make_op(const char* op, Shape shape, std::vector<float> value,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backward) {
  if (numel_of(shape) != static_cast<int64_t>(value.size()))
    throw ShapeError(std::string("op '") + op + "': result payload " +
                     std::to_string(value.size()) + " does not match shape " +
                     shape_str(shape));
  check_value_finite(op, value);

  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;

  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  }
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

}  // namespace detail

}  // namespace fcf
