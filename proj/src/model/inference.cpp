#include "tomotx/model/inference.hpp"

#include <algorithm>
#include <map>

#include "tomotx/common/error.hpp"

namespace tomotx::model {

namespace {

// Runs the model over groups of inputs sharing a kept count and hands each
// sample's slice of the output to `store`.
template <typename Store>
void run_grouped(const SinogramTransformer& model, std::span<const ct::MaskedSinogram> inputs, double sino_scale,
                 int batch_size, Store store) {
  if (batch_size < 1) throw ConfigError("inference: batch_size must be at least 1");
  std::map<size_t, std::vector<size_t>> groups;
  for (size_t i = 0; i < inputs.size(); ++i) groups[inputs[i].kept_indices.size()].push_back(i);
  for (const auto& [kept, members] : groups) {
    for (size_t start = 0; start < members.size(); start += static_cast<size_t>(batch_size)) {
      const size_t stop = std::min(members.size(), start + static_cast<size_t>(batch_size));
      std::vector<const ct::MaskedSinogram*> ptrs;
      for (size_t m = start; m < stop; ++m) ptrs.push_back(&inputs[members[m]]);
      const auto batch = VisibleBatch::from_masked(ptrs, sino_scale);
      const auto out = model.forward(batch);
      const auto per = static_cast<size_t>(out.numel()) / ptrs.size();
      for (size_t m = start; m < stop; ++m) {
        store(members[m], out.data().subspan((m - start) * per, per));
      }
    }
  }
}

ct::Sinogram to_sinogram(const ct::Sinogram& like, std::span<const float> values, double sino_scale) {
  ct::Sinogram s{like.grid, Image(like.n_angles(), like.n_bins())};
  auto dst = s.values.values();
  const auto k = static_cast<float>(sino_scale);
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = values[i] * k;
  return s;
}

void require_head(const SinogramTransformer& model, HeadKind kind, const char* what) {
  if (model.config().head_kind != kind) {
    throw ContractError(std::string(what) + ": model head is " + to_string(model.config().head_kind));
  }
}

}  // namespace

std::vector<ct::Sinogram> inpaint(const SinogramTransformer& model, std::span<const ct::MaskedSinogram> inputs,
                                  double sino_scale, bool keep_measured, int batch_size) {
  require_head(model, HeadKind::sino_decoder, "inpaint");
  std::vector<ct::Sinogram> out(inputs.size());
  run_grouped(model, inputs, sino_scale, batch_size, [&](size_t i, std::span<const float> values) {
    out[i] = to_sinogram(inputs[i].sinogram, values, sino_scale);
    if (keep_measured) {
      for (int a : inputs[i].kept_indices) {
        std::ranges::copy(inputs[i].sinogram.row(a), out[i].row(a).begin());
      }
    }
  });
  return out;
}

std::vector<ct::Sinogram> denoise(const SinogramTransformer& model, std::span<const ct::Sinogram> inputs,
                                  double sino_scale, int batch_size) {
  require_head(model, HeadKind::sino_decoder, "denoise");
  std::vector<ct::MaskedSinogram> full;
  full.reserve(inputs.size());
  for (const auto& s : inputs) full.push_back(ct::apply_mask(s, ct::MaskSpec{ct::MaskScheme::uniform, 0.0, 0}));
  std::vector<ct::Sinogram> out(inputs.size());
  run_grouped(model, full, sino_scale, batch_size, [&](size_t i, std::span<const float> values) {
    out[i] = to_sinogram(inputs[i], values, sino_scale);
  });
  return out;
}

std::vector<Image> reconstruct_direct(const SinogramTransformer& model, std::span<const ct::MaskedSinogram> inputs,
                                      double sino_scale, int batch_size) {
  require_head(model, HeadKind::image_patch_decoder, "reconstruct_direct");
  const auto& cfg = model.config();
  std::vector<Image> out(inputs.size());
  run_grouped(model, inputs, sino_scale, batch_size, [&](size_t i, std::span<const float> values) {
    out[i] = assemble_patches(values, cfg.image_side(), cfg.patch_side);
  });
  return out;
}

}  // namespace tomotx::model
