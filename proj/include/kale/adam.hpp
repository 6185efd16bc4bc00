#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kale/tensor.hpp"

namespace kale {

// Per-parameter Adam state. Moment buffers match the parameter's shape.
template <typename S>
struct AdamState {
  std::int64_t step = 0;
  std::vector<S> first_moment;
  std::vector<S> second_moment;
  S learning_rate = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);

  static AdamState for_param(const Tensor<S>& param, S learning_rate) {
    AdamState st;
    st.learning_rate = learning_rate;
    st.first_moment.assign(param.value().size(), S(0));
    st.second_moment.assign(param.value().size(), S(0));
    st.validate();
    return st;
  }

  void validate() const {
    if (step < 0) throw ParameterError("adam: step must be non-negative");
    if (!(beta1 > S(0) && beta1 < S(1) && beta2 > S(0) && beta2 < S(1)))
      throw ParameterError("adam: betas must lie in (0,1)");
    if (!(epsilon > S(0))) throw ParameterError("adam: epsilon must be positive");
  }
};

// One bias-corrected Adam update, in place.
template <typename S>
void adam_step(Tensor<S>& param, const std::vector<S>& grad, AdamState<S>& state) {
  auto& p = param.value();
  if (grad.size() != p.size() || state.first_moment.size() != p.size())
    throw DimensionError("adam_step: parameter " + shape_str(param.shape()) +
                         " and gradient/state sizes disagree");
  state.validate();
  state.step += 1;
  const S b1 = state.beta1, b2 = state.beta2;
  const S bc1 = S(1) - std::pow(b1, S(state.step));
  const S bc2 = S(1) - std::pow(b2, S(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    S& m = state.first_moment[i];
    S& v = state.second_moment[i];
    m = b1 * m + (S(1) - b1) * grad[i];
    v = b2 * v + (S(1) - b2) * grad[i] * grad[i];
    const S mhat = m / bc1;
    const S vhat = v / bc2;
    p[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

}  // namespace kale
