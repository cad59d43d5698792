#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace tomotx::model {

enum class HeadKind { sino_decoder, image_patch_decoder };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

struct ModelConfig {
  // Detector bins per projection; also the reconstructed image side.
  int token_dim = 64;
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 128;
  int max_angles = 60;
  HeadKind head_kind = HeadKind::sino_decoder;
  int patch_side = 8;

  int image_side() const { return token_dim; }
  int patches_per_side() const { return token_dim / patch_side; }
  int n_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_pixels() const { return patch_side * patch_side; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

// Desk-scale defaults: 64-pixel side, 60 angles.
ModelConfig desk_config(HeadKind head = HeadKind::sino_decoder);

}  // namespace tomotx::model
