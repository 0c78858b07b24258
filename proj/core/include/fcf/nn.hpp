#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fcf/ops.hpp"
#include "fcf/tensor.hpp"

namespace fcf {

/// Ordered name -> tensor registry. Parameter names must be unique; buffers
/// (BN running statistics and similar non-learned state) live in a second
/// list so optimizers skip them but checkpoints include them.
class ParamRegistry {
 public:
  void add_param(const std::string& name, Tensor t);
  void add_buffer(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const {
    return buffers_;
  }

  /// params ++ buffers, for checkpointing.
  std::vector<std::pair<std::string, Tensor>> all() const;

  void zero_grad();

 private:
  void check_unique(const std::string& name);
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
  std::map<std::string, int> seen_;
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out); undefined when has_bias == false
  bool has_bias = true;

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng, bool with_bias = true,
         float init_std = 0.02f);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

struct LayerNorm {
  Tensor gain;  // ones
  Tensor bias;  // zeros

  LayerNorm() = default;
  explicit LayerNorm(int64_t dim);

  Tensor operator()(const Tensor& x) const {
    return layer_norm(x, gain, bias);
  }
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

struct MultiHeadAttention {
  Linear wq, wk, wv, proj;
  int64_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int64_t dim, int64_t heads, Rng& rng);

  /// x: (B, T, C) -> (B, T, C)
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

/// Pre-norm block: x + attn(ln1(x)), then x + mlp(ln2(x)). MLP widens 4x
/// with GELU.
struct TransformerLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  TransformerLayer() = default;
  TransformerLayer(int64_t dim, int64_t heads, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

/// Batch-norm neck: gamma-only BN between features and classifier.
struct BnNeck {
  Tensor gamma;         // (C) parameter
  Tensor running_mean;  // (C) buffer
  Tensor running_var;   // (C) buffer
  float momentum = 0.1f;

  BnNeck() = default;
  explicit BnNeck(int64_t dim);

  /// x: (rows, C)
  Tensor operator()(const Tensor& x, bool training) {
    return batch_norm(x, gamma, running_mean, running_var, training, momentum);
  }
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

/// SGD with momentum and decoupled-from-schedule L2 weight decay added to the
/// gradient. Velocity buffers are keyed by parameter name so they can be
/// checkpointed and restored.
class Sgd {
 public:
  explicit Sgd(float momentum = 0.9f, float weight_decay = 1e-4f)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const ParamRegistry& reg, float lr);

  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::map<std::string, Tensor>& state,
                  const std::string& prefix);

  float momentum() const { return momentum_; }
  float weight_decay() const { return weight_decay_; }

 private:
  float momentum_;
  float weight_decay_;
  std::map<std::string, std::vector<float>> velocity_;
};

}  // namespace fcf
