#include "tomotx/model/layers.hpp"

#include <cmath>

#include "tomotx/common/error.hpp"
#include "tomotx/common/rng.hpp"

namespace tomotx::model {

using namespace tomotx::diff;

Tensor ParameterStore::add(const std::string& name, Tensor t) {
  if (find(name)) throw ContractError("parameter store: duplicate parameter '" + name + "'");
  t.set_requires_grad(true);
  items_.push_back({name, t});
  return t;
}

Tensor ParameterStore::uniform(const std::string& name, Shape shape, int64_t fan_in) {
  Rng rng(derive_seed({seed_, fnv1a(name)}));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> v(static_cast<size_t>(diff::numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return add(name, Tensor::from_data(std::move(shape), std::move(v)));
}

Tensor ParameterStore::normal(const std::string& name, Shape shape, double stddev) {
  Rng rng(derive_seed({seed_, fnv1a(name)}));
  std::vector<float> v(static_cast<size_t>(diff::numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
  return add(name, Tensor::from_data(std::move(shape), std::move(v)));
}

Tensor ParameterStore::sinusoidal(const std::string& name, int64_t rows, int64_t d) {
  std::vector<float> v(static_cast<size_t>(rows * d));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t k = 0; k < d; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k / 2 * 2) / static_cast<double>(d));
      const double a = static_cast<double>(r) * freq;
      v[static_cast<size_t>(r * d + k)] = static_cast<float>(k % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return add(name, Tensor::from_data({rows, d}, std::move(v)));
}

Tensor ParameterStore::constant(const std::string& name, Shape shape, float value) {
  return add(name, Tensor::full(std::move(shape), value));
}

const Tensor* ParameterStore::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

int64_t ParameterStore::count() const {
  int64_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

Linear Linear::create(ParameterStore& store, const std::string& name, int64_t in, int64_t out) {
  return {store.uniform(name + ".weight", {in, out}, in), store.uniform(name + ".bias", {out}, in)};
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, int64_t dim) {
  return {store.constant(name + ".gain", {dim}, 1.0f), store.constant(name + ".bias", {dim}, 0.0f)};
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, int64_t d_model,
                                              int n_heads) {
  MultiHeadAttention m;
  m.query = Linear::create(store, name + ".query", d_model, d_model);
  m.key = Linear::create(store, name + ".key", d_model, d_model);
  m.value = Linear::create(store, name + ".value", d_model, d_model);
  m.out = Linear::create(store, name + ".out", d_model, d_model);
  m.n_heads = n_heads;
  return m;
}

namespace {

// [B, L, d] -> [B, H, L, d/H]
Tensor split_heads(const Tensor& x, int64_t heads) {
  const int64_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {b, l, heads, d / heads}), {0, 2, 1, 3});
}

// [B, H, L, dh] -> [B, L, H*dh]
Tensor merge_heads(const Tensor& x) {
  const int64_t b = x.dim(0), h = x.dim(1), l = x.dim(2), dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, l, h * dh});
}

}  // namespace

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& memory, Tensor* weights) const {
  if (queries.ndim() != 3 || memory.ndim() != 3 || queries.dim(0) != memory.dim(0) ||
      queries.dim(2) != memory.dim(2)) {
    throw ShapeError("attention: incompatible query " + shape_str(queries.shape()) + " and memory " +
                     shape_str(memory.shape()));
  }
  const int64_t head_dim = queries.dim(2) / n_heads;
  const auto q = split_heads(query(queries), n_heads);
  const auto k = split_heads(key(memory), n_heads);
  const auto v = split_heads(value(memory), n_heads);
  const auto scores = scale(matmul(q, transpose(k)), static_cast<float>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  const auto attn = softmax_lastdim(scores);
  if (weights) *weights = attn;
  return out(merge_heads(matmul(attn, v)));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, int64_t d_model, int64_t d_ff) {
  return {Linear::create(store, name + ".up", d_model, d_ff), Linear::create(store, name + ".down", d_ff, d_model)};
}

EncoderBlock EncoderBlock::create(ParameterStore& store, const std::string& name, int64_t d_model, int n_heads,
                                  int64_t d_ff) {
  return {LayerNorm::create(store, name + ".norm1", d_model),
          MultiHeadAttention::create(store, name + ".attn", d_model, n_heads),
          LayerNorm::create(store, name + ".norm2", d_model), FeedForward::create(store, name + ".ff", d_model, d_ff)};
}

Tensor EncoderBlock::operator()(const Tensor& x, Tensor* weights) const {
  const auto h = norm1(x);
  const auto y = add(x, attention(h, h, weights));
  return add(y, ff(norm2(y)));
}

CrossBlock CrossBlock::create(ParameterStore& store, const std::string& name, int64_t d_model, int n_heads,
                              int64_t d_ff) {
  return {LayerNorm::create(store, name + ".norm1", d_model),
          MultiHeadAttention::create(store, name + ".self_attn", d_model, n_heads),
          LayerNorm::create(store, name + ".norm_query", d_model),
          LayerNorm::create(store, name + ".norm_memory", d_model),
          MultiHeadAttention::create(store, name + ".cross_attn", d_model, n_heads),
          LayerNorm::create(store, name + ".norm3", d_model),
          FeedForward::create(store, name + ".ff", d_model, d_ff)};
}

Tensor CrossBlock::operator()(const Tensor& x, const Tensor& memory, Tensor* self_weights,
                              Tensor* cross_weights) const {
  const auto h = norm1(x);
  const auto y = add(x, self_attention(h, h, self_weights));
  const auto z = add(y, cross_attention(norm_query(y), norm_memory(memory), cross_weights));
  return add(z, ff(norm3(z)));
}

}  // namespace tomotx::model
