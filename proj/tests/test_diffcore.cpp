#include <cmath>

#include "doctest.h"
#include "dietfield/autodiff.hpp"
#include "dietfield/error.hpp"
#include "dietfield/gradcheck.hpp"
#include "dietfield/rng.hpp"

using namespace dietfield;
using namespace dietfield::diff;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float scale = 1.0f) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (float& v : t.mutable_values()) v = static_cast<float>(rng.normal()) * scale;
  return t;
}

FiniteDifferenceReport check(const GraphFn& fn, const NamedTensors& params, double tol = 1e-2, float eps = 1e-3f) {
  FiniteDifferenceOptions opts;
  opts.tolerance = tol;
  opts.epsilon = eps;
  return finite_difference_check(fn, params, opts);
}

}  // namespace

TEST_CASE("forward examples") {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(3.0f));
  CHECK((x * x).value().item() == 9.0f);

  Var s = softmax(tape.constant(Tensor::from({0.0f, 0.0f})));
  CHECK(s.value()[0] == doctest::Approx(0.5));
  CHECK(s.value()[1] == doctest::Approx(0.5));

  Var c = tape.constant(Tensor(Shape{1, 6}, 2.5f));
  Var ln = layer_norm(c, tape.constant(Tensor(Shape{6}, 1.0f)), tape.constant(Tensor(Shape{6}, 0.0f)));
  for (float v : ln.value().values()) CHECK(v == 0.0f);
}

TEST_CASE("backward examples") {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(2.0f));
  Var y = tape.parameter(Tensor::scalar(5.0f));
  Gradients g = tape.backward(x * y);
  CHECK(g.of(x).item() == 5.0f);
  CHECK(g.of(y).item() == 2.0f);

  Tape t2;
  Var z = t2.parameter(Tensor::scalar(0.0f));
  CHECK(t2.backward(sin(z)).of(z).item() == doctest::Approx(1.0));
}

TEST_CASE("backward requires a scalar output and zero-fills disconnected parameters") {
  Tape tape;
  Var a = tape.parameter(Tensor::from({1.0f, 2.0f}));
  Var unused = tape.parameter(Tensor::from({7.0f, 8.0f, 9.0f}));
  CHECK_THROWS_AS(tape.backward(a * a), ShapeError);
  Gradients g = tape.backward(sum(a * a));
  CHECK_FALSE(g.has(unused));
  const Tensor gu = g.of(unused);
  CHECK(gu.shape() == Shape{3});
  for (float v : gu.values()) CHECK(v == 0.0f);
}

TEST_CASE("shape errors name the op and shapes") {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 3}));
  Var b = tape.constant(Tensor(Shape{4, 5}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("assert_finite surfaces NaN") {
  Tape tape;
  Var x = tape.constant(Tensor::from({-1.0f, 4.0f}));
  Var y = sqrt(x);
  CHECK_THROWS_AS(assert_finite(y.value(), "sqrt"), NonFiniteError);
  CHECK_NOTHROW(assert_finite(Tensor::from({1.0f}), "ok"));
}

TEST_CASE("three-layer MLP matches central differences") {
  NamedTensors params{{"w0", random_tensor({4, 8}, 1, 0.5f)}, {"b0", random_tensor({8}, 2, 0.1f)},
                      {"w1", random_tensor({8, 8}, 3, 0.4f)}, {"b1", random_tensor({8}, 4, 0.1f)},
                      {"w2", random_tensor({8, 1}, 5, 0.4f)}, {"b2", random_tensor({1}, 6, 0.1f)}};
  const Tensor input = random_tensor({5, 4}, 7);
  GraphFn mlp = [&](Tape& tape, const std::map<std::string, Var>& p) {
    Var h = tanh(matmul(tape.constant(input), p.at("w0")) + p.at("b0"));
    h = softplus(matmul(h, p.at("w1")) + p.at("b1"));
    return mean(square(matmul(h, p.at("w2")) + p.at("b2")));
  };
  const auto report = check(mlp, params);
  INFO("worst ", report.worst_param, "[", report.worst_index, "] rel ", report.max_rel_err, " a ", report.analytic_at_worst, " n ", report.numeric_at_worst);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-2);
  CHECK(report.coords_checked == 4 * 8 + 8 + 64 + 8 + 8 + 1);
}

TEST_CASE("quadratic form gradient equals 2Ax") {
  Rng rng(11);
  const int n = 6;
  Tensor a(Shape{n, n});
  {
    Tensor raw = random_tensor({n, n}, 12);
    auto av = a.mutable_values();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) av[i * n + j] = 0.5f * (raw[i * n + j] + raw[j * n + i]);
  }
  const Tensor x0 = random_tensor({n, 1}, 13);
  GraphFn quad = [&](Tape& tape, const std::map<std::string, Var>& p) {
    Var x = p.at("x");
    return sum(matmul(x, matmul(tape.constant(a), x), true, false));
  };
  auto [value, grads] = value_and_grad(quad, {{"x", x0}});
  for (int i = 0; i < n; ++i) {
    double expected = 0.0;
    for (int j = 0; j < n; ++j) expected += 2.0 * a[i * n + j] * x0[j];
    CHECK(grads.at("x")[i] == doctest::Approx(expected).epsilon(1e-5));
  }
  CHECK(check(quad, {{"x", x0}}, 1e-3).passed);
}

TEST_CASE("a deliberately wrong gradient fails the check") {
  GraphFn broken = [](Tape& tape, const std::map<std::string, Var>& p) {
    Var x = p.at("x");
    Tensor y = x.value();
    for (float& v : y.mutable_values()) v = v * v;
    // value x^2 but gradient claims 3x
    Tensor xv = x.value();
    Var out = tape.record("broken_square", y, {x}, [xv](const Tensor& g, GradSink& sink) {
      Tensor gx(xv.shape());
      for (std::int64_t i = 0; i < xv.size(); ++i) gx.mutable_values()[static_cast<std::size_t>(i)] = 3.0f * xv[i] * g[i];
      sink.add(0, gx);
    });
    return sum(out);
  };
  const auto report = check(broken, {{"x", Tensor::from({0.5f, -1.0f, 2.0f})}});
  CHECK_FALSE(report.passed);
  CHECK(report.worst_param == "x");
}

TEST_CASE("every op passes the finite-difference check") {
  const Tensor a = random_tensor({3, 4}, 21);
  const Tensor b = random_tensor({3, 4}, 22);
  const Tensor row = random_tensor({1, 4}, 23);
  Tensor positive = random_tensor({3, 4}, 24);
  for (float& v : positive.mutable_values()) v = 0.5f + std::abs(v);

  struct Case {
    const char* name;
    std::function<Var(Var, Var)> op;  // (x, y) -> tensor
    Tensor x, y;
  };
  const std::vector<Case> cases = {
      {"add_broadcast", [](Var x, Var y) { return x + y; }, a, row},
      {"sub_broadcast", [](Var x, Var y) { return x - y; }, a, row},
      {"mul_broadcast", [](Var x, Var y) { return x * y; }, a, row},
      {"div", [](Var x, Var y) { return x / y; }, a, positive},
      {"exp", [](Var x, Var) { return exp(x * 0.5f); }, a, b},
      {"log", [](Var, Var y) { return log(y); }, a, positive},
      {"sin_cos", [](Var x, Var y) { return sin(x) * cos(y); }, a, b},
      {"softplus", [](Var x, Var) { return softplus(x * 3.0f); }, a, b},
      {"sigmoid", [](Var x, Var) { return sigmoid(x); }, a, b},
      {"gelu", [](Var x, Var) { return gelu(x); }, a, b},
      {"quick_gelu", [](Var x, Var) { return quick_gelu(x); }, a, b},
      {"tanh", [](Var x, Var) { return tanh(x); }, a, b},
      {"sqrt", [](Var, Var y) { return sqrt(y); }, a, positive},
      {"square", [](Var x, Var) { return square(x); }, a, b},
      {"concat0", [](Var x, Var y) { return slice(concat({x, y}, 0), 0, 1, 5); }, a, b},
      {"concat1", [](Var x, Var y) { return slice(concat({x, y}, 1), 1, 2, 7); }, a, b},
      {"transpose", [](Var x, Var) { return transpose(x); }, a, b},
      {"sum_axis0", [](Var x, Var) { return sum(x, 0, true); }, a, b},
      {"mean_axis1", [](Var x, Var) { return mean(x, 1); }, a, b},
      {"cumsum", [](Var x, Var) { return cumsum(x, 1); }, a, b},
      {"cumsum_exclusive", [](Var x, Var) { return cumsum(x, 1, true); }, a, b},
      {"softmax", [](Var x, Var) { return softmax(x); }, a, b},
      {"layer_norm", [](Var x, Var y) { return layer_norm(x, reshape(slice(y, 0, 0, 1), {4}), reshape(slice(y, 0, 1, 2), {4})); }, a, b},
      {"matmul_tt", [](Var x, Var y) { return matmul(x, y, true, false); }, a, b},
      {"matmul_nt", [](Var x, Var y) { return matmul(x, y, false, true); }, a, b},
      {"broadcast_to", [](Var, Var y) { return broadcast_to(y, {3, 4}); }, a, row},
      {"dot", [](Var x, Var y) { return dot(reshape(x, {12}), reshape(y, {12})); }, a, b},
      {"l2_normalize", [](Var x, Var) { return l2_normalize(x); }, a, b},
  };
  for (const auto& c : cases) {
    GraphFn fn = [&](Tape& tape, const std::map<std::string, Var>& p) {
      Var out = c.op(p.at("x"), p.at("y"));
      // Contract with a fixed random tensor of matching size.
      Tensor proj = random_tensor(out.shape(), 99);
      return sum(out * tape.constant(proj));
    };
    // Smooth single ops: a wider step keeps float32 rounding noise well below the tolerance.
    const auto report = check(fn, {{"x", c.x}, {"y", c.y}}, 1e-2, 1e-2f);
    INFO(c.name, ": worst ", report.worst_param, "[", report.worst_index, "] analytic ", report.analytic_at_worst,
         " numeric ", report.numeric_at_worst);
    CHECK(report.passed);
  }
}

TEST_CASE("image ops pass the finite-difference check") {
  const Tensor image = random_tensor({8, 8, 3}, 31);
  const auto rows = bilinear_weights(8, 5);
  const auto cols = area_weights(8, 3);
  GraphFn fn = [&](Tape& tape, const std::map<std::string, Var>& p) {
    Var r = resample(p.at("img"), rows, cols);
    Var patches = patchify(p.at("img"), 4);
    return sum(r * tape.constant(random_tensor(r.shape(), 5))) + sum(square(patches) * tape.constant(random_tensor(patches.shape(), 6)));
  };
  const auto report = check(fn, {{"img", image}}, 1e-2, 1e-2f);
  INFO("worst ", report.worst_index, " analytic ", report.analytic_at_worst, " numeric ", report.numeric_at_worst);
  CHECK(report.passed);
}

TEST_CASE("resampling weights") {
  // area averaging to one cell is the mean
  const auto w = area_weights(6, 1);
  float total = 0.0f;
  for (const auto& [i, wt] : w.taps[0]) total += wt;
  CHECK(total == doctest::Approx(1.0));
  // identity-size bilinear is the identity
  const auto id = bilinear_weights(7, 7);
  for (std::size_t i = 0; i < id.taps.size(); ++i) {
    REQUIRE(id.taps[i].size() == 1);
    CHECK(id.taps[i][0].first == static_cast<std::int64_t>(i));
    CHECK(id.taps[i][0].second == 1.0f);
  }
}

TEST_CASE("rematerialized backward equals stored-activation backward") {
  const Tensor input = random_tensor({16, 6}, 41);
  NamedTensors params{{"w0", random_tensor({6, 10}, 42, 0.5f)}, {"b0", random_tensor({10}, 43, 0.1f)},
                      {"w1", random_tensor({10, 10}, 44, 0.4f)}, {"b1", random_tensor({10}, 45, 0.1f)},
                      {"w2", random_tensor({10, 1}, 46, 0.4f)}};
  auto build = [&](bool remat) {
    return GraphFn([&, remat](Tape& tape, const std::map<std::string, Var>& p) {
      Var h = tape.constant(input);
      for (const char* l : {"0", "1"}) {
        Var w = p.at(std::string("w") + l), b = p.at(std::string("b") + l);
        if (remat) {
          const Var ins[] = {h, w, b};
          h = checkpointed(ins, [](Tape&, std::span<const Var> in) { return relu(matmul(in[0], in[1]) + in[2]); });
        } else {
          h = relu(matmul(h, w) + b);
        }
      }
      return mean(square(matmul(h, p.at("w2"))));
    });
  };
  auto [v_plain, g_plain] = value_and_grad(build(false), params);
  auto [v_remat, g_remat] = value_and_grad(build(true), params);
  CHECK(v_plain == v_remat);
  for (const auto& [name, g] : g_plain) {
    const Tensor& r = g_remat.at(name);
    for (std::int64_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - r[i]) <= 1e-6f);
  }
}

TEST_CASE("forward is pure") {
  const Tensor input = random_tensor({32, 5}, 51);
  const Tensor w = random_tensor({5, 7}, 52);
  auto run = [&] {
    Tape tape;
    return softmax(gelu(matmul(tape.constant(input), tape.constant(w)))).value();
  };
  CHECK(run().identical(run()));
}
