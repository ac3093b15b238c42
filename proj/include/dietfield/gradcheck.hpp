#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "dietfield/autodiff.hpp"

namespace dietfield::diff {

// A differentiable computation: records onto `tape` given one parameter leaf per named tensor and
// returns a scalar.
using GraphFn = std::function<Var(Tape& tape, const std::map<std::string, Var>& params)>;

struct FiniteDifferenceOptions {
  float epsilon = 1e-3f;
  double tolerance = 1e-2;
  // Coordinates probed per parameter tensor, drawn without replacement; 0 probes all of them.
  std::int64_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Relative error of a parameter tensor is ||a - n|| / max(||a||, ||n||, floor) over its probed
  // coordinates (L2 norms), which stays meaningful when individual coordinates sit at float32
  // rounding noise.
  double denominator_floor = 1e-8;
};

struct FiniteDifferenceReport {
  double max_rel_err = 0.0;     // worst per-tensor relative error
  std::string worst_param;      // tensor attaining it
  std::int64_t worst_index = -1;  // coordinate of that tensor with the largest |a - n|
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::int64_t coords_checked = 0;
  bool passed = true;
};

// Evaluates `fn` once with backward() and compares each probed coordinate's gradient against the
// central difference (f(x + eps) - f(x - eps)) / (2 eps).
FiniteDifferenceReport finite_difference_check(const GraphFn& fn, const NamedTensors& params,
                                               const FiniteDifferenceOptions& options = {});

// Forward value and gradients of `fn` at `params`.
std::pair<float, NamedTensors> value_and_grad(const GraphFn& fn, const NamedTensors& params);

}  // namespace dietfield::diff
