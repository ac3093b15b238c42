#include "dietfield/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dietfield/error.hpp"
#include "dietfield/rng.hpp"

namespace dietfield::diff {

namespace {

float evaluate(const GraphFn& fn, const NamedTensors& params) {
  Tape tape;
  std::map<std::string, Var> leaves;
  for (const auto& [name, t] : params) leaves.emplace(name, tape.constant(t));
  return fn(tape, leaves).value().item();
}

}  // namespace

std::pair<float, NamedTensors> value_and_grad(const GraphFn& fn, const NamedTensors& params) {
  Tape tape;
  std::map<std::string, Var> leaves;
  for (const auto& [name, t] : params) leaves.emplace(name, tape.parameter(t));
  Var out = fn(tape, leaves);
  Gradients grads = tape.backward(out);
  NamedTensors result;
  for (const auto& [name, v] : leaves) result.emplace(name, grads.of(v));
  return {out.value().item(), std::move(result)};
}

FiniteDifferenceReport finite_difference_check(const GraphFn& fn, const NamedTensors& params,
                                               const FiniteDifferenceOptions& options) {
  if (!(options.epsilon > 0.0f)) throw ValidationError("finite_difference_check: epsilon must be positive");
  const NamedTensors analytic = value_and_grad(fn, params).second;
  Rng rng(options.seed);
  FiniteDifferenceReport report;
  NamedTensors probe = params;
  for (const auto& [name, base] : params) {
    std::vector<std::int64_t> coords(static_cast<std::size_t>(base.size()));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 && base.size() > options.max_coords_per_param) {
      // partial Fisher-Yates
      for (std::int64_t i = 0; i < options.max_coords_per_param; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(base.size() - i)));
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(static_cast<std::size_t>(options.max_coords_per_param));
      std::sort(coords.begin(), coords.end());
    }
    const Tensor& grad = analytic.at(name);
    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0, worst_abs = -1.0;
    std::int64_t worst = -1;
    double worst_a = 0.0, worst_n = 0.0;
    for (std::int64_t c : coords) {
      Tensor plus = base, minus = base;
      plus.mutable_values()[static_cast<std::size_t>(c)] += options.epsilon;
      minus.mutable_values()[static_cast<std::size_t>(c)] -= options.epsilon;
      probe[name] = plus;
      const double f_plus = evaluate(fn, probe);
      probe[name] = minus;
      const double f_minus = evaluate(fn, probe);
      probe[name] = base;
      // Use the step actually representable in float.
      const double step = static_cast<double>(plus[c]) - static_cast<double>(minus[c]);
      const double numeric = (f_plus - f_minus) / step;
      const double a = grad[c];
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
      if (std::abs(a - numeric) > worst_abs) {
        worst_abs = std::abs(a - numeric);
        worst = c;
        worst_a = a;
        worst_n = numeric;
      }
      ++report.coords_checked;
    }
    if (coords.empty()) continue;
    const double denom = std::max({std::sqrt(a_sq), std::sqrt(n_sq), options.denominator_floor});
    const double rel = std::sqrt(diff_sq) / denom;
    if (rel > report.max_rel_err || report.worst_index < 0) {
      report.max_rel_err = rel;
      report.worst_param = name;
      report.worst_index = worst;
      report.analytic_at_worst = worst_a;
      report.numeric_at_worst = worst_n;
    }
  }
  report.passed = report.max_rel_err < options.tolerance;
  return report;
}

}  // namespace dietfield::diff
