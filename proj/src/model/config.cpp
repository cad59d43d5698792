#include "tomotx/model/config.hpp"

#include "tomotx/common/error.hpp"

namespace tomotx::model {

std::string to_string(HeadKind kind) {
  return kind == HeadKind::sino_decoder ? "sino_decoder" : "image_patch_decoder";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "sino_decoder") return HeadKind::sino_decoder;
  if (name == "image_patch_decoder") return HeadKind::image_patch_decoder;
  throw ConfigError("model config: unknown head_kind '" + name + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (token_dim < 1) fail("token_dim must be >= 1");
  if (d_model < 1 || n_heads < 1) fail("d_model and n_heads must be >= 1");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_enc_layers < 1 || n_dec_layers < 1) fail("need at least one encoder and one decoder layer");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (max_angles < 1) fail("max_angles must be >= 1");
  if (head_kind == HeadKind::image_patch_decoder) {
    if (patch_side < 1 || token_dim % patch_side != 0) fail("patch_side must divide the image side");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"token_dim", token_dim},   {"d_model", d_model},           {"n_heads", n_heads},
          {"n_enc_layers", n_enc_layers}, {"n_dec_layers", n_dec_layers}, {"d_ff", d_ff},
          {"max_angles", max_angles}, {"head_kind", to_string(head_kind)}, {"patch_side", patch_side}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.token_dim = j.at("token_dim").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_enc_layers = j.at("n_enc_layers").get<int>();
    c.n_dec_layers = j.at("n_dec_layers").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_angles = j.at("max_angles").get<int>();
    c.head_kind = head_kind_from_string(j.at("head_kind").get<std::string>());
    c.patch_side = j.at("patch_side").get<int>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

ModelConfig desk_config(HeadKind head) {
  ModelConfig c;
  c.head_kind = head;
  return c;
}

}  // namespace tomotx::model
