#pragma once

#include <cmath>
#include <functional>

#include "kale/ops.hpp"
#include "kale/tensor.hpp"

namespace kale {

// Compares the reverse-mode gradient of a scalar function with central
// finite differences, coordinate by coordinate over x. Returns the maximum
// relative error  |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// The closure must rebuild its graph from the current leaf values on every
// call; that is the natural shape for a dynamic tape.
template <typename S>
S gradient_check(const std::function<Tensor<S>()>& f, Tensor<S> x, S h) {
  if (!(h > S(0))) throw ParameterError("gradient_check: h must be positive");
  x.zero_grad();
  Tensor<S> y = f();
  if (y.numel() != 1)
    throw DimensionError("gradient_check: f must produce a scalar");
  if (!std::isfinite(y.item()))
    throw NumericError("gradient_check: f is not finite at x");
  y.backward();
  std::vector<S> analytic = x.grad();
  x.zero_grad();

  S worst = S(0);
  NoGradGuard ng;
  auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const S keep = xv[i];
    xv[i] = keep + h;
    const S fp = f().item();
    xv[i] = keep - h;
    const S fm = f().item();
    xv[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("gradient_check: f is not finite at a perturbed point");
    const S numeric = (fp - fm) / (S(2) * h);
    const S denom = std::max(S(1e-8), std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace kale
