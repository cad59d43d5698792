#pragma once

#include <span>
#include <vector>

#include "tomotx/model/msm.hpp"

namespace tomotx::model {

// Batched, gradient-free prediction helpers. Inputs may mix kept counts;
// they are grouped internally. Outputs are in dataset units.

// Full-view sinogram predictions. With `keep_measured`, rows that were
// measured are copied through instead of using the model's estimate.
std::vector<ct::Sinogram> inpaint(const SinogramTransformer& model, std::span<const ct::MaskedSinogram> inputs,
                                  double sino_scale, bool keep_measured = true, int batch_size = 32);

std::vector<ct::Sinogram> denoise(const SinogramTransformer& model, std::span<const ct::Sinogram> inputs,
                                  double sino_scale, int batch_size = 32);

// Image-head reconstruction; pixel values are in phantom units.
std::vector<Image> reconstruct_direct(const SinogramTransformer& model, std::span<const ct::MaskedSinogram> inputs,
                                      double sino_scale, int batch_size = 32);

}  // namespace tomotx::model
