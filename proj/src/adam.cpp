#include "dietfield/adam.hpp"

#include <cmath>

#include "dietfield/error.hpp"

namespace dietfield::optim {

using diff::Tensor;

void adam_update(diff::NamedTensors& params, const diff::NamedTensors& grads, AdamState& state, double lr) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("adam_update: gradient for unknown parameter '" + name + "'");
    if (g.shape() != it->second.shape()) {
      throw ShapeError("adam_update: gradient " + diff::shape_string(g.shape()) + " for '" + name + "' of shape " +
                       diff::shape_string(it->second.shape()));
    }
    diff::assert_finite(g, "gradient of '" + name + "'");
  }
  const std::int64_t t = ++state.step;
  const double c1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    Tensor& m = state.m.try_emplace(name, Tensor(p.shape())).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.shape())).first->second;
    auto git = grads.find(name);
    const float* g = git != grads.end() ? git->second.data() : nullptr;
    float* pm = m.mutable_data();
    float* pv = v.mutable_data();
    float* pp = p.mutable_data();
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double gi = g ? g[i] : 0.0;
      const double mi = AdamState::beta1 * pm[i] + (1.0 - AdamState::beta1) * gi;
      const double vi = AdamState::beta2 * pv[i] + (1.0 - AdamState::beta2) * gi * gi;
      pm[i] = static_cast<float>(mi);
      pv[i] = static_cast<float>(vi);
      pp[i] = static_cast<float>(pp[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + AdamState::epsilon));
    }
  }
}

double decayed_lr(double lr_init, double decay_steps, std::int64_t iteration) {
  return lr_init * std::pow(0.1, static_cast<double>(iteration) / decay_steps);
}

}  // namespace dietfield::optim
