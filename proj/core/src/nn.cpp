#include "fcf/nn.hpp"

#include <cmath>

namespace fcf {

void ParamRegistry::check_unique(const std::string& name) {
  if (!seen_.emplace(name, 1).second)
    throw ValueError("duplicate registry name: " + name);
}

void ParamRegistry::add_param(const std::string& name, Tensor t) {
  check_unique(name);
  if (!t.requires_grad())
    throw ValueError("parameter '" + name + "' does not require grad");
  params_.emplace_back(name, std::move(t));
}

void ParamRegistry::add_buffer(const std::string& name, Tensor t) {
  check_unique(name);
  buffers_.emplace_back(name, std::move(t));
}

std::vector<std::pair<std::string, Tensor>> ParamRegistry::all() const {
  auto out = params_;
  out.insert(out.end(), buffers_.begin(), buffers_.end());
  return out;
}

void ParamRegistry::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, bool with_bias,
               float init_std)
    : weight(Tensor::randn({in, out}, rng, init_std, true)),
      has_bias(with_bias) {
  if (with_bias) bias = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  if (has_bias) y = add(y, bias);
  return y;
}

void Linear::collect(const std::string& prefix, ParamRegistry& reg) const {
  reg.add_param(prefix + ".weight", weight);
  if (has_bias) reg.add_param(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(int64_t dim)
    : gain(Tensor::full({dim}, 1.0f, true)), bias(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(const std::string& prefix, ParamRegistry& reg) const {
  reg.add_param(prefix + ".gain", gain);
  reg.add_param(prefix + ".bias", bias);
}

MultiHeadAttention::MultiHeadAttention(int64_t dim, int64_t heads, Rng& rng)
    : wq(dim, dim, rng),
      wk(dim, dim, rng),
      wv(dim, dim, rng),
      proj(dim, dim, rng),
      heads(heads) {
  if (dim % heads != 0)
    throw ValueError("attention dim " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(heads));
}

Tensor MultiHeadAttention::operator()(const Tensor& x) const {
  const int64_t b = x.extent(0), t = x.extent(1), c = x.extent(2);
  const int64_t dh = c / heads;
  auto split = [&](const Tensor& y) {
    return permute(reshape(y, {b, t, heads, dh}), {0, 2, 1, 3});
  };
  Tensor q = split(wq(x));
  Tensor k = split(wk(x));
  Tensor v = split(wv(x));
  Tensor scores = mul_scalar(matmul(q, transpose_last2(k)),
                             1.0f / std::sqrt(static_cast<float>(dh)));
  Tensor attn = softmax(scores, -1);
  Tensor out = matmul(attn, v);                       // (B, H, T, dh)
  out = reshape(permute(out, {0, 2, 1, 3}), {b, t, c});
  return proj(out);
}

void MultiHeadAttention::collect(const std::string& prefix,
                                 ParamRegistry& reg) const {
  wq.collect(prefix + ".wq", reg);
  wk.collect(prefix + ".wk", reg);
  wv.collect(prefix + ".wv", reg);
  proj.collect(prefix + ".proj", reg);
}

TransformerLayer::TransformerLayer(int64_t dim, int64_t heads, Rng& rng)
    : ln1(dim),
      ln2(dim),
      attn(dim, heads, rng),
      fc1(dim, 4 * dim, rng),
      fc2(4 * dim, dim, rng) {}

Tensor TransformerLayer::operator()(const Tensor& x) const {
  Tensor h = add(x, attn(ln1(x)));
  return add(h, fc2(gelu(fc1(ln2(h)))));
}

void TransformerLayer::collect(const std::string& prefix,
                               ParamRegistry& reg) const {
  ln1.collect(prefix + ".ln1", reg);
  attn.collect(prefix + ".attn", reg);
  ln2.collect(prefix + ".ln2", reg);
  fc1.collect(prefix + ".fc1", reg);
  fc2.collect(prefix + ".fc2", reg);
}

BnNeck::BnNeck(int64_t dim)
    : gamma(Tensor::full({dim}, 1.0f, true)),
      running_mean(Tensor::zeros({dim})),
      running_var(Tensor::full({dim}, 1.0f)) {}

void BnNeck::collect(const std::string& prefix, ParamRegistry& reg) const {
  reg.add_param(prefix + ".gamma", gamma);
  reg.add_buffer(prefix + ".running_mean", running_mean);
  reg.add_buffer(prefix + ".running_var", running_var);
}

void Sgd::step(const ParamRegistry& reg, float lr) {
  for (const auto& [name, t] : reg.params()) {
    auto w = const_cast<Tensor&>(t).mutable_data();
    auto g = t.grad();
    auto& vel = velocity_[name];
    if (vel.empty()) vel.assign(w.size(), 0.0f);
    if (g.empty()) {
      // No gradient reached this parameter this step; weight decay still
      // applies through the momentum buffer.
      for (size_t i = 0; i < w.size(); ++i) {
        vel[i] = momentum_ * vel[i] + weight_decay_ * w[i];
        w[i] -= lr * vel[i];
      }
      continue;
    }
    for (size_t i = 0; i < w.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * w[i];
      w[i] -= lr * vel[i];
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Sgd::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(velocity_.size());
  for (const auto& [name, vel] : velocity_) {
    out.emplace_back("optim.momentum." + name,
                     Tensor::from_data({static_cast<int64_t>(vel.size())},
                                       std::vector<float>(vel)));
  }
  return out;
}

void Sgd::load_state(const std::map<std::string, Tensor>& state,
                     const std::string& prefix) {
  velocity_.clear();
  for (const auto& [name, t] : state) {
    if (name.rfind(prefix, 0) == 0) {
      auto d = t.data();
      velocity_[name.substr(prefix.size())] =
          std::vector<float>(d.begin(), d.end());
    }
  }
}

}  // namespace fcf
