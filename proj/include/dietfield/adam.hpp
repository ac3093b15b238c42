#pragma once

#include <cstdint>

#include "dietfield/tensor.hpp"

namespace dietfield::optim {

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  diff::NamedTensors m;
  diff::NamedTensors v;
  std::int64_t step = 0;
};

// One bias-corrected Adam step on every entry of `params`. Parameters without an entry in `grads`
// get a zero gradient. Throws NonFiniteError on non-finite gradients before touching anything.
void adam_update(diff::NamedTensors& params, const diff::NamedTensors& grads, AdamState& state, double lr);

// lr_init * 0.1^(iteration / decay_steps)
double decayed_lr(double lr_init, double decay_steps, std::int64_t iteration);

}  // namespace dietfield::optim
