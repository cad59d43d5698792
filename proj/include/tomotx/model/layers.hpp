#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tomotx/diffcore/ops.hpp"

namespace tomotx::model {

using diff::Tensor;

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Owns every trainable tensor of a model under a stable dotted name. Each
// tensor's initial values come from a stream keyed by (seed, name), so the
// same name always initializes identically regardless of creation order.
class ParameterStore {
 public:
  explicit ParameterStore(uint64_t seed = 0) : seed_(seed) {}

  Tensor uniform(const std::string& name, diff::Shape shape, int64_t fan_in);
  Tensor normal(const std::string& name, diff::Shape shape, double stddev);
  Tensor constant(const std::string& name, diff::Shape shape, float value);
  // [rows, d] table of sin/cos pairs at geometric frequencies, row = position.
  Tensor sinusoidal(const std::string& name, int64_t rows, int64_t d);

  std::vector<NamedParameter>& items() { return items_; }
  const std::vector<NamedParameter>& items() const { return items_; }
  const Tensor* find(const std::string& name) const;
  int64_t count() const;

 private:
  Tensor add(const std::string& name, Tensor t);

  uint64_t seed_;
  std::vector<NamedParameter> items_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear create(ParameterStore& store, const std::string& name, int64_t in, int64_t out);
  Tensor operator()(const Tensor& x) const { return diff::linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm create(ParameterStore& store, const std::string& name, int64_t dim);
  Tensor operator()(const Tensor& x) const { return diff::layer_norm(x, gain, bias); }
};

struct MultiHeadAttention {
  Linear query, key, value, out;
  int n_heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name, int64_t d_model, int n_heads);
  // queries: [B, Lq, d]; memory: [B, Lk, d]. When `weights` is non-null the
  // post-softmax attention [B, H, Lq, Lk] is stored there.
  Tensor operator()(const Tensor& queries, const Tensor& memory, Tensor* weights = nullptr) const;
};

struct FeedForward {
  Linear up, down;

  static FeedForward create(ParameterStore& store, const std::string& name, int64_t d_model, int64_t d_ff);
  Tensor operator()(const Tensor& x) const { return down(diff::gelu(up(x))); }
};

// Pre-norm self-attention block.
struct EncoderBlock {
  LayerNorm norm1;
  MultiHeadAttention attention;
  LayerNorm norm2;
  FeedForward ff;

  static EncoderBlock create(ParameterStore& store, const std::string& name, int64_t d_model, int n_heads,
                             int64_t d_ff);
  Tensor operator()(const Tensor& x, Tensor* weights = nullptr) const;
};

// Pre-norm block over patch queries: self-attention, cross-attention into the
// sinogram memory, then feed-forward.
struct CrossBlock {
  LayerNorm norm1;
  MultiHeadAttention self_attention;
  LayerNorm norm_query;
  LayerNorm norm_memory;
  MultiHeadAttention cross_attention;
  LayerNorm norm3;
  FeedForward ff;

  static CrossBlock create(ParameterStore& store, const std::string& name, int64_t d_model, int n_heads,
                           int64_t d_ff);
  Tensor operator()(const Tensor& x, const Tensor& memory, Tensor* self_weights = nullptr,
                    Tensor* cross_weights = nullptr) const;
};

}  // namespace tomotx::model
