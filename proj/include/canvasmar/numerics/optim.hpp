#pragma once

#include <string>
#include <utility>
#include <vector>

#include "canvasmar/numerics/tensor.hpp"

namespace canvasmar {

/// Named trainable leaves, in a stable registration order.
template <typename Scalar>
using ParamList = std::vector<std::pair<std::string, Tensor<Scalar>>>;

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-8;
  int warmup_steps = 200;
};

/// Linear warmup from lr/warmup to lr over the first `warmup_steps` steps
/// (step is 1-based).
double warmup_learning_rate(const AdamConfig& config, long step);

template <typename Scalar>
struct OptState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;

  static OptState zeros_like(const ParamList<Scalar>& params, AdamConfig config = {});
};

/// One bias-corrected Adam update at learning rate `lr`; increments the step
/// counter. `grads[i]` pairs with `params[i]`.
template <typename Scalar>
void adam_step(ParamList<Scalar>& params, const std::vector<Matrix<Scalar>>& grads, OptState<Scalar>& state, double lr);

}  // namespace canvasmar
