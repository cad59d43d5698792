#include "tomotx/diffcore/adam.hpp"

#include <cmath>
#include <string>

#include "tomotx/common/error.hpp"

namespace tomotx::diff {

AdamState make_adam_state(std::span<const Tensor> params, double lr) {
  AdamState state;
  state.lr = lr;
  for (const auto& p : params) {
    state.first_moment.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    state.second_moment.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
  return state;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but state tracks " +
                     std::to_string(state.first_moment.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (static_cast<int64_t>(state.first_moment[i].size()) != params[i].numel()) {
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i) + " " +
                       shape_str(params[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      data[j] = static_cast<float>(data[j] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace tomotx::diff
