#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "canvasmar/numerics/tensor.hpp"

namespace canvasmar {

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences with step `eps`. Returns max_i |analytic_i - numeric_i| /
/// (|analytic_i| + 1e-8). `f` builds its graph from the tensor it is given.
template <typename Scalar>
double finite_diff_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f, const Matrix<Scalar>& x,
                         double eps) {
  if (!(eps > 0.0 && eps < 0.1)) throw std::invalid_argument("finite_diff_check: eps must lie in (0, 0.1)");
  Matrix<Scalar> analytic;
  {
    GradTape<Scalar> tape;
    TapeScope<Scalar> scope(tape);
    Tensor<Scalar> xt(x, true);
    Tensor<Scalar> loss = f(xt);
    analytic = backward(tape, loss).of(xt);
  }
  NoGradScope<Scalar> no_grad;
  auto eval = [&](const Matrix<Scalar>& at) {
    const double v = static_cast<double>(f(Tensor<Scalar>(at)).item());
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: f is not finite at a perturbed point");
    return v;
  };
  double worst = 0.0;
  Matrix<Scalar> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe.data()[i];
    const Scalar hi = orig + static_cast<Scalar>(eps);
    const Scalar lo = orig - static_cast<Scalar>(eps);
    probe.data()[i] = hi;
    const double up = eval(probe);
    probe.data()[i] = lo;
    const double down = eval(probe);
    probe.data()[i] = orig;
    // Divide by the representable step, not the nominal one.
    const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double a = static_cast<double>(analytic.data()[i]);
    worst = std::max(worst, std::abs(a - numeric) / (std::abs(a) + 1e-8));
  }
  return worst;
}

}  // namespace canvasmar
