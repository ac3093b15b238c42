#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "dietfield/field.hpp"
#include "dietfield/gradcheck.hpp"
#include "test_util.hpp"

using namespace dietfield;
using namespace dietfield::diff;
using namespace dietfield::field;

namespace {

FieldConfig small_field(bool view_dependent) {
  FieldConfig f;
  f.depth = 3;
  f.width = 16;
  f.skip_layers = {2};
  f.view_dependent = view_dependent;
  return f;
}

EncodingConfig small_encoding() {
  EncodingConfig e;
  e.num_freqs_position = 3;
  e.num_freqs_direction = 2;
  return e;
}

Tensor unit_rows(Tensor t) {
  auto v = t.mutable_values();
  for (std::int64_t i = 0; i < t.dim(0); ++i) {
    const double n = std::hypot(v[static_cast<std::size_t>(i * 3)], v[static_cast<std::size_t>(i * 3 + 1)],
                                v[static_cast<std::size_t>(i * 3 + 2)]);
    for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(i * 3 + c)] /= static_cast<float>(n);
  }
  return t;
}

}  // namespace

TEST_CASE("positional encoding examples") {
  const Tensor zero = positional_encode(Tensor(Shape{1, 1}, 0.0f), 2, true);
  REQUIRE(zero.size() == 5);
  const float expected[] = {0, 0, 1, 0, 1};
  for (int i = 0; i < 5; ++i) CHECK(zero[i] == expected[i]);

  const Tensor half_pi = positional_encode(Tensor(Shape{1, 1}, static_cast<float>(std::numbers::pi / 2)), 1, false);
  REQUIRE(half_pi.size() == 2);
  CHECK(half_pi[0] == doctest::Approx(1.0));
  CHECK(std::abs(half_pi[1]) < 1e-6);

  CHECK(encoded_size(3, 10, true) == 63);
  CHECK(positional_encode(Tensor(Shape{4, 3}), 10, true).dim(1) == 63);

  // Var and Tensor paths agree.
  Tape tape;
  const Tensor pts = testutil::random_tensor({5, 3}, 3);
  CHECK(positional_encode(tape.constant(pts), 4, true).value().identical(positional_encode(pts, 4, true)));
}

TEST_CASE("positional encoding is injective on [-pi, pi)^3 (random pairs)") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    Tensor a(Shape{1, 3}), b(Shape{1, 3});
    for (int c = 0; c < 3; ++c) {
      a.mutable_values()[static_cast<std::size_t>(c)] = static_cast<float>(rng.uniform(-std::numbers::pi, std::numbers::pi));
      b.mutable_values()[static_cast<std::size_t>(c)] = static_cast<float>(rng.uniform(-std::numbers::pi, std::numbers::pi));
    }
    if (a.identical(b)) continue;
    CHECK_FALSE(positional_encode(a, 1, false).identical(positional_encode(b, 1, false)));
  }
}

TEST_CASE("init_params") {
  const auto f = small_field(true);
  const auto e = small_encoding();
  const FieldParams a = init_params(f, e, 5), b = init_params(f, e, 5), c = init_params(f, e, 6);
  REQUIRE(a.size() == param_shapes(f, e).size());
  bool differs = false;
  for (const auto& [name, t] : a) {
    CHECK(t.identical(b.at(name)));
    differs = differs || !t.identical(c.at(name));
    CHECK(t.shape() == param_shapes(f, e).at(name));
    if (name.ends_with(".bias")) {
      for (float v : t.values()) CHECK(v == 0.0f);
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.dim(0) + t.dim(1)));
      for (float v : t.values()) CHECK(std::abs(v) <= bound);
    }
  }
  CHECK(differs);
  // layer 2 takes the skip connection
  CHECK(a.at("layer2.weight").dim(0) == 16 + encoded_size(3, 3, true));
}

TEST_CASE("field_eval ranges and view dependence") {
  const auto e = small_encoding();
  const Tensor x = testutil::random_tensor({32, 3}, 1, 2.0f);
  const Tensor d1 = unit_rows(testutil::random_tensor({32, 3}, 2));
  const Tensor d2 = unit_rows(testutil::random_tensor({32, 3}, 3));

  SUBCASE("view independent: identical output for any direction") {
    const auto f = small_field(false);
    const FieldParams p = init_params(f, e, 1);
    Tape tape;
    const FieldVars v = as_constants(tape, p);
    const FieldOutput o1 = field_eval(v, tape.constant(x), tape.constant(d1), f, e);
    const FieldOutput o2 = field_eval(v, tape.constant(x), tape.constant(d2), f, e);
    CHECK(o1.rgb.value().identical(o2.rgb.value()));
    CHECK(o1.sigma.value().identical(o2.sigma.value()));
  }
  SUBCASE("view dependent: density ignores direction, color does not") {
    const auto f = small_field(true);
    FieldParams p = init_params(f, e, 1);
    Tape tape;
    const FieldVars v = as_constants(tape, p);
    const FieldOutput o1 = field_eval(v, tape.constant(x), tape.constant(d1), f, e);
    const FieldOutput o2 = field_eval(v, tape.constant(x), tape.constant(d2), f, e);
    CHECK(o1.sigma.value().identical(o2.sigma.value()));
    CHECK_FALSE(o1.rgb.value().identical(o2.rgb.value()));
    for (float s : o1.sigma.value().values()) CHECK(s >= 0.0f);
    for (float c : o1.rgb.value().values()) {
      CHECK(c >= 0.0f);
      CHECK(c <= 1.0f);
    }
  }
}

TEST_CASE("density gradient matches finite differences") {
  const auto f = small_field(true);
  const auto e = small_encoding();
  const FieldParams p = init_params(f, e, 9);
  const Tensor x = testutil::random_tensor({6, 3}, 4, 0.5f);
  const Tensor d = unit_rows(testutil::random_tensor({6, 3}, 5));
  GraphFn fn = [&](Tape& tape, const std::map<std::string, Var>& vars) {
    FieldVars fv(vars.begin(), vars.end());
    const FieldOutput o = field_eval(fv, tape.constant(x), tape.constant(d), f, e);
    return mean(o.sigma) + mean(o.rgb);
  };
  FiniteDifferenceOptions opts;
  opts.max_coords_per_param = 24;
  const auto report = finite_difference_check(fn, p, opts);
  INFO("worst " << report.worst_param << " rel " << report.max_rel_err);
  CHECK(report.passed);
}

TEST_CASE("rematerialized field gives identical gradients") {
  auto f = small_field(true);
  const auto e = small_encoding();
  const FieldParams p = init_params(f, e, 2);
  const Tensor x = testutil::random_tensor({8, 3}, 6);
  const Tensor d = unit_rows(testutil::random_tensor({8, 3}, 7));
  auto grads = [&](bool remat) {
    FieldConfig cfg = f;
    cfg.rematerialize = remat;
    Tape tape;
    const FieldVars v = as_parameters(tape, p);
    const FieldOutput o = field_eval(v, tape.constant(x), tape.constant(d), cfg, e);
    const Gradients g = tape.backward(sum(o.sigma) + sum(o.rgb));
    NamedTensors out;
    for (const auto& [k, var] : v) out.emplace(k, g.of(var));
    return out;
  };
  const NamedTensors a = grads(false), b = grads(true);
  for (const auto& [k, t] : a) {
    for (std::int64_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i] - b.at(k)[i]) <= 1e-6);
  }
}

TEST_CASE("config validation") {
  FieldConfig f;
  f.depth = 1;
  CHECK_THROWS(f.validate());
  f = FieldConfig{};
  f.skip_layers = {8};
  CHECK_THROWS(f.validate());
  EncodingConfig e;
  e.num_freqs_position = 0;
  CHECK_THROWS(e.validate());
}
