#include "tomotx/model/msm.hpp"

#include <algorithm>
#include <string>

#include "tomotx/common/error.hpp"

namespace tomotx::model {

using namespace tomotx::diff;

namespace {

constexpr double kEmbeddingStd = 0.02;

template <typename Sample, typename RowsOf, typename KeptOf>
VisibleBatch pack(std::span<const Sample* const> samples, double sino_scale, RowsOf rows_of, KeptOf kept_of) {
  if (samples.empty()) throw ContractError("visible batch: no samples");
  if (!(sino_scale > 0.0)) throw ContractError("visible batch: sinogram scale must be positive");
  VisibleBatch b;
  b.batch = static_cast<int64_t>(samples.size());
  const ct::Sinogram& first = rows_of(*samples[0]);
  b.total_angles = first.n_angles();
  b.token_dim = first.n_bins();
  b.kept = static_cast<int64_t>(kept_of(*samples[0]).size());
  b.rows.reserve(static_cast<size_t>(b.batch * b.kept * b.token_dim));
  b.angle_ids.reserve(static_cast<size_t>(b.batch * b.kept));
  const auto inv = static_cast<float>(1.0 / sino_scale);
  for (const Sample* s : samples) {
    const ct::Sinogram& sino = rows_of(*s);
    const auto& kept = kept_of(*s);
    if (sino.n_angles() != b.total_angles || sino.n_bins() != b.token_dim) {
      throw ShapeError("visible batch: sinograms in one batch must share a shape");
    }
    if (static_cast<int64_t>(kept.size()) != b.kept) {
      throw ContractError("visible batch: samples in one batch must keep the same number of angles");
    }
    int prev = -1;
    for (int a : kept) {
      if (a <= prev || a >= b.total_angles) throw ContractError("visible batch: kept indices must be sorted and in range");
      prev = a;
      for (float v : sino.row(a)) b.rows.push_back(v * inv);
      b.angle_ids.push_back(a);
    }
  }
  return b;
}

}  // namespace

VisibleBatch VisibleBatch::from_masked(std::span<const ct::MaskedSinogram* const> samples, double sino_scale) {
  return pack(
      samples, sino_scale, [](const ct::MaskedSinogram& m) -> const ct::Sinogram& { return m.sinogram; },
      [](const ct::MaskedSinogram& m) -> const std::vector<int>& { return m.kept_indices; });
}

VisibleBatch VisibleBatch::from_full(std::span<const ct::Sinogram* const> samples, double sino_scale) {
  std::vector<int> all(static_cast<size_t>(samples.empty() ? 0 : samples[0]->n_angles()));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return pack(
      samples, sino_scale, [](const ct::Sinogram& s) -> const ct::Sinogram& { return s; },
      [&all](const ct::Sinogram&) -> const std::vector<int>& { return all; });
}

SinogramTransformer::SinogramTransformer(const ModelConfig& config, uint64_t seed)
    : config_(config), store_(seed) {
  config_.validate();
  const int64_t d = config_.d_model;
  embed_ = Linear::create(store_, "encoder.embed", config_.token_dim, d);
  enc_pos_ = store_.sinusoidal("encoder.pos", config_.max_angles, d);
  for (int i = 0; i < config_.n_enc_layers; ++i) {
    enc_blocks_.push_back(
        EncoderBlock::create(store_, "encoder.block" + std::to_string(i), d, config_.n_heads, config_.d_ff));
  }
  enc_norm_ = LayerNorm::create(store_, "encoder.norm", d);

  dec_embed_ = Linear::create(store_, "decoder.embed", d, d);
  mask_token_ = store_.normal("decoder.mask_token", {1, d}, kEmbeddingStd);
  dec_pos_ = store_.sinusoidal("decoder.pos", config_.max_angles, d);
  if (config_.head_kind == HeadKind::sino_decoder) {
    for (int i = 0; i < config_.n_dec_layers; ++i) {
      dec_blocks_.push_back(
          EncoderBlock::create(store_, "decoder.block" + std::to_string(i), d, config_.n_heads, config_.d_ff));
    }
    dec_norm_ = LayerNorm::create(store_, "decoder.norm", d);
    dec_head_ = Linear::create(store_, "decoder.head", d, config_.token_dim);
  } else {
    patch_queries_ = store_.normal("decoder.patch_queries", {config_.n_patches(), d}, kEmbeddingStd);
    for (int i = 0; i < config_.n_dec_layers; ++i) {
      cross_blocks_.push_back(
          CrossBlock::create(store_, "decoder.block" + std::to_string(i), d, config_.n_heads, config_.d_ff));
    }
    dec_norm_ = LayerNorm::create(store_, "decoder.norm", d);
    dec_head_ = Linear::create(store_, "decoder.head", d, config_.patch_pixels());
  }
}

void SinogramTransformer::freeze_encoder(bool frozen) {
  for (auto& p : store_.items()) {
    if (p.name.starts_with(kEncoderPrefix)) {
      p.tensor.set_requires_grad(!frozen);
      if (frozen) p.tensor.zero_grad();
    }
  }
}

std::vector<Tensor> SinogramTransformer::trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : store_.items()) {
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  }
  return out;
}

Tensor SinogramTransformer::embed(const VisibleBatch& batch) const {
  if (batch.token_dim != config_.token_dim) {
    throw ShapeError("embed: projection width " + std::to_string(batch.token_dim) + " does not match token_dim " +
                     std::to_string(config_.token_dim));
  }
  if (batch.total_angles > config_.max_angles) {
    throw ContractError("embed: " + std::to_string(batch.total_angles) + " angles exceed max_angles " +
                        std::to_string(config_.max_angles));
  }
  if (batch.kept < 1) throw ContractError("embed: no visible projections");
  const int64_t n = batch.batch * batch.kept;
  const auto rows = Tensor::from_data({n, batch.token_dim}, batch.rows);
  const auto tokens = add(embed_(rows), gather_rows(enc_pos_, batch.angle_ids));
  return reshape(tokens, {batch.batch, batch.kept, config_.d_model});
}

Tensor SinogramTransformer::encode(const Tensor& tokens, AttentionTrace* trace) const {
  if (tokens.ndim() != 3 || tokens.dim(1) < 1) throw ContractError("encode: expected [B, L>=1, d] tokens");
  Tensor x = tokens;
  for (const auto& block : enc_blocks_) {
    Tensor w;
    x = block(x, trace ? &w : nullptr);
    if (trace) trace->encoder.push_back(w);
  }
  return enc_norm_(x);
}

Tensor SinogramTransformer::decoder_input(const Tensor& encoded, const VisibleBatch& batch) const {
  const int64_t b = batch.batch, k = batch.kept, a = batch.total_angles, d = config_.d_model;
  if (encoded.ndim() != 3 || encoded.dim(0) != b || encoded.dim(1) != k || encoded.dim(2) != d) {
    throw ContractError("decode: encoded tokens " + shape_str(encoded.shape()) + " do not match the batch");
  }
  if (a > config_.max_angles) throw ContractError("decode: total angles exceed max_angles");
  const auto projected = dec_embed_(reshape(encoded, {b * k, d}));
  const std::vector<Tensor> parts{projected, mask_token_};
  const auto table = concat_rows(parts);
  const int64_t mask_row = b * k;
  std::vector<int64_t> slots(static_cast<size_t>(b * a), mask_row);
  std::vector<int64_t> positions(static_cast<size_t>(b * a));
  for (int64_t s = 0; s < b; ++s) {
    for (int64_t j = 0; j < k; ++j) {
      const int64_t angle = batch.angle_ids[static_cast<size_t>(s * k + j)];
      if (angle < 0 || angle >= a) throw ContractError("decode: kept index outside the angle range");
      slots[static_cast<size_t>(s * a + angle)] = s * k + j;
    }
    for (int64_t i = 0; i < a; ++i) positions[static_cast<size_t>(s * a + i)] = i;
  }
  const auto seq = add(gather_rows(table, slots), gather_rows(dec_pos_, positions));
  return reshape(seq, {b, a, d});
}

Tensor SinogramTransformer::decode_sino(const Tensor& encoded, const VisibleBatch& batch,
                                        AttentionTrace* trace) const {
  if (config_.head_kind != HeadKind::sino_decoder) throw ContractError("decode_sino: model has an image head");
  Tensor x = decoder_input(encoded, batch);
  for (const auto& block : dec_blocks_) {
    Tensor w;
    x = block(x, trace ? &w : nullptr);
    if (trace) trace->decoder.push_back(w);
  }
  return dec_head_(dec_norm_(x));
}

Tensor SinogramTransformer::decode_image(const Tensor& encoded, const VisibleBatch& batch,
                                         AttentionTrace* trace) const {
  if (config_.head_kind != HeadKind::image_patch_decoder) {
    throw ContractError("decode_image: model has a sinogram head");
  }
  const auto memory = decoder_input(encoded, batch);
  const int64_t b = batch.batch, p = config_.n_patches();
  std::vector<int64_t> ids(static_cast<size_t>(b * p));
  for (int64_t s = 0; s < b; ++s) {
    for (int64_t i = 0; i < p; ++i) ids[static_cast<size_t>(s * p + i)] = i;
  }
  Tensor x = reshape(gather_rows(patch_queries_, ids), {b, p, config_.d_model});
  for (const auto& block : cross_blocks_) {
    Tensor ws, wc;
    x = block(x, memory, trace ? &ws : nullptr, trace ? &wc : nullptr);
    if (trace) {
      trace->decoder.push_back(ws);
      trace->decoder_cross.push_back(wc);
    }
  }
  return dec_head_(dec_norm_(x));
}

Tensor SinogramTransformer::forward(const VisibleBatch& batch, AttentionTrace* trace) const {
  const auto encoded = encode(embed(batch), trace);
  return config_.head_kind == HeadKind::sino_decoder ? decode_sino(encoded, batch, trace)
                                                     : decode_image(encoded, batch, trace);
}

void SinogramTransformer::load(const std::vector<std::pair<std::string, std::vector<float>>>& values) {
  for (const auto& [name, data] : values) {
    auto it = std::find_if(store_.items().begin(), store_.items().end(),
                           [&](const NamedParameter& p) { return p.name == name; });
    if (it == store_.items().end()) throw IntegrityError("model load: unknown parameter '" + name + "'");
    if (static_cast<int64_t>(data.size()) != it->tensor.numel()) {
      throw IntegrityError("model load: parameter '" + name + "' has " + std::to_string(data.size()) +
                           " values, expected " + std::to_string(it->tensor.numel()));
    }
    std::copy(data.begin(), data.end(), it->tensor.mutable_data().begin());
  }
}

Tensor msm_loss(const Tensor& pred, const Tensor& target) { return mse_loss(pred, target); }

double msm_loss(const ct::Sinogram& pred, const ct::Sinogram& target) {
  if (pred.n_angles() != target.n_angles() || pred.n_bins() != target.n_bins()) {
    throw ShapeError("msm_loss: sinogram shapes differ");
  }
  double acc = 0.0;
  const auto p = pred.values.values();
  const auto t = target.values.values();
  for (size_t i = 0; i < p.size(); ++i) {
    const double e = static_cast<double>(p[i]) - t[i];
    acc += e * e;
  }
  return acc / static_cast<double>(p.size());
}

AttentionMap extract_attention(const SinogramTransformer& model, const VisibleBatch& input, int layer, int head) {
  const auto& cfg = model.config();
  if (layer < 0 || layer >= cfg.n_dec_layers) {
    throw ContractError("extract_attention: layer " + std::to_string(layer) + " outside [0, " +
                        std::to_string(cfg.n_dec_layers) + ")");
  }
  if (head < 0 || head >= cfg.n_heads) {
    throw ContractError("extract_attention: head " + std::to_string(head) + " outside [0, " +
                        std::to_string(cfg.n_heads) + ")");
  }
  AttentionTrace trace;
  (void)model.forward(input, &trace);
  const auto& w = trace.decoder.at(static_cast<size_t>(layer));
  AttentionMap map;
  map.layer = layer;
  map.head = head;
  map.rows = static_cast<int>(w.dim(2));
  map.cols = static_cast<int>(w.dim(3));
  const auto per_head = static_cast<size_t>(map.rows) * map.cols;
  const auto first = w.data().begin() + static_cast<std::ptrdiff_t>(head * per_head);
  map.weights.assign(first, first + static_cast<std::ptrdiff_t>(per_head));
  return map;
}

Image assemble_patches(std::span<const float> patches, int side, int patch_side) {
  if (patch_side < 1 || side % patch_side != 0) throw ContractError("assemble_patches: patch side must divide side");
  const int per = side / patch_side;
  if (patches.size() != static_cast<size_t>(side) * side) {
    throw ShapeError("assemble_patches: expected " + std::to_string(side * side) + " values, got " +
                     std::to_string(patches.size()));
  }
  Image img = Image::square(side);
  const auto pp = static_cast<size_t>(patch_side) * patch_side;
  for (int p = 0; p < per * per; ++p) {
    const int pr = p / per, pc = p % per;
    for (int i = 0; i < patch_side; ++i) {
      for (int j = 0; j < patch_side; ++j) {
        img(pr * patch_side + i, pc * patch_side + j) = patches[static_cast<size_t>(p) * pp + i * patch_side + j];
      }
    }
  }
  return img;
}

std::vector<float> disassemble_patches(const Image& image, int patch_side) {
  const int side = image.rows();
  if (image.cols() != side || patch_side < 1 || side % patch_side != 0) {
    throw ContractError("disassemble_patches: need a square image divisible by the patch side");
  }
  const int per = side / patch_side;
  std::vector<float> out;
  out.reserve(image.size());
  for (int p = 0; p < per * per; ++p) {
    const int pr = p / per, pc = p % per;
    for (int i = 0; i < patch_side; ++i) {
      for (int j = 0; j < patch_side; ++j) out.push_back(image(pr * patch_side + i, pc * patch_side + j));
    }
  }
  return out;
}

}  // namespace tomotx::model
