#pragma once

#include <cmath>

#include "spherecnf/coefficient_net.hpp"
#include "spherecnf/errors.hpp"

namespace spherecnf {

/// Bias-corrected Adam state, shape-congruent with the network parameters.
struct AdamState {
  ParamGradient m;  ///< first-moment accumulator
  ParamGradient v;  ///< second-moment accumulator
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(const CoefficientNet& net) {
    AdamState s;
    s.m = ParamGradient::zeros_like(net);
    s.v = ParamGradient::zeros_like(net);
    return s;
  }
};

/// One bias-corrected Adam update, in place.
inline void adam_step(AdamState& state, CoefficientNet& net,
                      const ParamGradient& grad, double lr) {
  if (state.m.weights.size() != net.weights.size() ||
      grad.weights.size() != net.weights.size())
    throw ConfigError("adam state/gradient shapes do not match the net");
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
      theta.array() -=
          lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
    };
    update(net.weights[l], state.m.weights[l], state.v.weights[l],
           grad.weights[l]);
    update(net.biases[l], state.m.biases[l], state.v.biases[l],
           grad.biases[l]);
  }
}

}  // namespace spherecnf
