#include "canvasmar/numerics/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace canvasmar {

double warmup_learning_rate(const AdamConfig& config, long step) {
  if (config.warmup_steps <= 0) return config.learning_rate;
  const double frac = std::min(1.0, static_cast<double>(std::max(step, 1L)) / config.warmup_steps);
  return config.learning_rate * frac;
}

template <typename Scalar>
OptState<Scalar> OptState<Scalar>::zeros_like(const ParamList<Scalar>& params, AdamConfig config) {
  OptState state;
  state.config = config;
  for (const auto& [name, p] : params) {
    state.first_moment.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    state.second_moment.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
  }
  return state;
}

template <typename Scalar>
void adam_step(ParamList<Scalar>& params, const std::vector<Matrix<Scalar>>& grads, OptState<Scalar>& state, double lr) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i].second;
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() || state.first_moment[i].rows() != p.rows() ||
        state.first_moment[i].cols() != p.cols()) {
      throw std::invalid_argument("adam_step: shape mismatch for '" + params[i].first + "'");
    }
  }
  state.step += 1;
  const auto& c = state.config;
  const Scalar b1 = static_cast<Scalar>(c.beta1);
  const Scalar b2 = static_cast<Scalar>(c.beta2);
  const Scalar bias1 = Scalar(1) - static_cast<Scalar>(std::pow(c.beta1, static_cast<double>(state.step)));
  const Scalar bias2 = Scalar(1) - static_cast<Scalar>(std::pow(c.beta2, static_cast<double>(state.step)));
  const Scalar eps = static_cast<Scalar>(c.epsilon);
  const Scalar step_size = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    auto& w = params[i].second.mutable_value();
    w.array() -= step_size * (m.array() / bias1) / ((v.array() / bias2).sqrt() + eps);
  }
}

template struct OptState<float>;
template struct OptState<double>;
template void adam_step(ParamList<float>&, const std::vector<Matrix<float>>&, OptState<float>&, double);
template void adam_step(ParamList<double>&, const std::vector<Matrix<double>>&, OptState<double>&, double);

}  // namespace canvasmar
