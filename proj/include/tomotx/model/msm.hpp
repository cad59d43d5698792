#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tomotx/ctgeom/ctgeom.hpp"
#include "tomotx/model/config.hpp"
#include "tomotx/model/layers.hpp"

namespace tomotx::model {

// Visible projections of a batch of sinograms that share a kept-angle count.
// Rows are already divided by the dataset scale.
struct VisibleBatch {
  int64_t batch = 0;
  int64_t kept = 0;
  int64_t total_angles = 0;
  int64_t token_dim = 0;
  std::vector<float> rows;          // [batch, kept, token_dim]
  std::vector<int64_t> angle_ids;   // [batch, kept], increasing per sample

  // All inputs must keep the same number of angles.
  static VisibleBatch from_masked(std::span<const ct::MaskedSinogram* const> samples, double sino_scale);
  static VisibleBatch from_full(std::span<const ct::Sinogram* const> samples, double sino_scale);
};

// Post-softmax attention of every layer, each [B, H, Lq, Lk].
struct AttentionTrace {
  std::vector<Tensor> encoder;
  std::vector<Tensor> decoder;
  std::vector<Tensor> decoder_cross;
};

struct AttentionMap {
  int layer = 0;
  int head = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> weights;  // rows x cols, row-major

  float at(int r, int c) const { return weights[static_cast<size_t>(r) * cols + c]; }
};

// Projections-as-tokens masked transformer. The encoder sees only visible
// projections; the decoder fills masked slots with a learned mask token and
// either predicts the full sinogram (sino_decoder) or the image as a
// sequence of patches (image_patch_decoder).
class SinogramTransformer {
 public:
  SinogramTransformer(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  // Parameter names under this prefix form the encoder (tokenizer included).
  static constexpr const char* kEncoderPrefix = "encoder.";
  void freeze_encoder(bool frozen);
  // Tensors updated by training in the current freeze state.
  std::vector<Tensor> trainable() const;

  // [B, kept, d_model]
  Tensor embed(const VisibleBatch& batch) const;
  Tensor encode(const Tensor& tokens, AttentionTrace* trace = nullptr) const;
  // [B, total_angles, token_dim]
  Tensor decode_sino(const Tensor& encoded, const VisibleBatch& batch, AttentionTrace* trace = nullptr) const;
  // [B, n_patches, patch_pixels]
  Tensor decode_image(const Tensor& encoded, const VisibleBatch& batch, AttentionTrace* trace = nullptr) const;

  // Dispatches on head_kind.
  Tensor forward(const VisibleBatch& batch, AttentionTrace* trace = nullptr) const;

  // Copies values for every parameter present in `values`; names that this
  // model does not have are an error, missing names are left as initialized.
  void load(const std::vector<std::pair<std::string, std::vector<float>>>& values);

 private:
  Tensor decoder_input(const Tensor& encoded, const VisibleBatch& batch) const;

  ModelConfig config_;
  ParameterStore store_;

  Linear embed_;
  Tensor enc_pos_;
  std::vector<EncoderBlock> enc_blocks_;
  LayerNorm enc_norm_;

  Linear dec_embed_;
  Tensor mask_token_;
  Tensor dec_pos_;
  LayerNorm dec_norm_;
  Linear dec_head_;
  std::vector<EncoderBlock> dec_blocks_;
  Tensor patch_queries_;
  std::vector<CrossBlock> cross_blocks_;
};

// Mean squared error over every row of the sinogram, masked and visible.
Tensor msm_loss(const Tensor& pred, const Tensor& target);
double msm_loss(const ct::Sinogram& pred, const ct::Sinogram& target);

// Decoder attention of sample 0 at (layer, head); layers are 0-based.
AttentionMap extract_attention(const SinogramTransformer& model, const VisibleBatch& input, int layer, int head);

// Patch order is top-to-bottom, left-to-right; pixels row-major within a patch.
Image assemble_patches(std::span<const float> patches, int side, int patch_side);
std::vector<float> disassemble_patches(const Image& image, int patch_side);

}  // namespace tomotx::model
