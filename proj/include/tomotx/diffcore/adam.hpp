#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tomotx/diffcore/tensor.hpp"

namespace tomotx::diff {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam_state(std::span<const Tensor> params, double lr = 1e-3);

// One bias-corrected Adam update using each parameter's accumulated grad.
// Parameters without a gradient buffer are left untouched.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace tomotx::diff
