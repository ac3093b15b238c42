#include "dietfield/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "dietfield/error.hpp"

namespace dietfield::diff {

// --- Var / GradSink / Gradients / Tape --------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

bool GradSink::wants(std::size_t k) const {
  return tape_.nodes_[static_cast<std::size_t>(inputs_[k])].requires_grad;
}

void GradSink::add(std::size_t k, Tensor grad) {
  const int id = inputs_[k];
  const Shape& expected = tape_.nodes_[static_cast<std::size_t>(id)].value.shape();
  if (grad.shape() != expected) {
    throw ShapeError("backward: gradient of shape " + shape_string(grad.shape()) + " for input of shape " +
                     shape_string(expected));
  }
  tape_.accumulate(id, std::move(grad));
}

Tensor Gradients::of(Var v) const {
  auto it = grads_.find(v.id());
  if (it != grads_.end()) return it->second;
  return Tensor(v.shape(), 0.0f);
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{"parameter", std::move(value), {}, nullptr, true, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, false, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error(std::string(op) + ": input recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || requires_grad(in);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(int id, Tensor grad) {
  auto& slot = pending_[static_cast<std::size_t>(id)];
  if (!slot) {
    slot = std::move(grad);
    return;
  }
  auto dst = slot->mutable_values();
  auto src = grad.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Gradients Tape::backward(Var output) {
  if (output.value().size() != 1) {
    throw ShapeError("backward: output must be a scalar, got shape " + shape_string(output.shape()));
  }
  return backward(output, Tensor(output.shape(), 1.0f));
}

Gradients Tape::backward(Var output, const Tensor& seed) {
  if (seed.shape() != output.shape()) {
    throw ShapeError("backward: seed shape " + shape_string(seed.shape()) + " does not match output " +
                     shape_string(output.shape()));
  }
  Gradients result;
  result.tape_ = this;
  pending_.assign(static_cast<std::size_t>(output.id()) + 1, std::nullopt);
  pending_[static_cast<std::size_t>(output.id())] = seed;
  for (int id = output.id(); id >= 0; --id) {
    auto& slot = pending_[static_cast<std::size_t>(id)];
    if (!slot) continue;
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) {
      slot.reset();
      continue;
    }
    if (node.leaf) {
      result.grads_.emplace(id, std::move(*slot));
    } else {
      GradSink sink(*this, node.inputs);
      node.backward(*slot, sink);
    }
    slot.reset();
  }
  pending_.clear();
  return result;
}

// --- broadcasting helpers ---------------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

int normalize_axis(int axis, int rank, std::string_view op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                       " do not broadcast");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `in` aligned to `out`'s rank, zero along broadcast dimensions.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::int64_t> strides(rank, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = rank - 1 - k;
    strides[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa, const std::vector<std::int64_t>& sb,
                        F&& f) {
  const std::int64_t total = shape_size(out);
  if (total == 0) return;
  const int rank = static_cast<int>(out.size());
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const std::int64_t inner = out[rank - 1];
  const std::int64_t ia_step = sa[rank - 1];
  const std::int64_t ib_step = sb[rank - 1];
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t o = 0; o < total; o += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(o + j, ia + j * ia_step, ib + j * ib_step);
    for (int d = rank - 2; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor binary_map(const Tensor& a, const Tensor& b, std::string_view op, F f) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    auto o = out.mutable_values();
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(pa[i], pb[i]);
    return out;
  }
  Shape shape = broadcast_shape(a.shape(), b.shape(), op);
  Tensor out(shape);
  float* po = out.mutable_data();
  const float* pa = a.data();
  const float* pb = b.data();
  for_each_broadcast(shape, broadcast_strides(a.shape(), shape), broadcast_strides(b.shape(), shape),
                     [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { po[o] = f(pa[ia], pb[ib]); });
  return out;
}

// Sums `g` over the dimensions along which `target` was broadcast.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target, 0.0f);
  float* po = out.mutable_data();
  const float* pg = g.data();
  const std::vector<std::int64_t> zero(g.shape().size(), 0);
  const std::vector<std::int64_t> st = broadcast_strides(target, g.shape());
  std::vector<std::int64_t> identity(g.shape().size());
  {
    std::int64_t s = 1;
    for (int d = static_cast<int>(identity.size()) - 1; d >= 0; --d) {
      identity[d] = s;
      s *= g.shape()[d];
    }
  }
  for_each_broadcast(g.shape(), identity, st, [&](std::int64_t, std::int64_t ig, std::int64_t it) { po[it] += pg[ig]; });
  return out;
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto o = out.mutable_values();
  const float* px = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(px[i]);
  return out;
}

// Elementwise op whose derivative is expressed through (x, y, upstream grad).
template <class F, class DF>
Var unary(std::string_view name, Var x, F f, DF df) {
  Tensor xv = x.value();
  Tensor y = map(xv, f);
  return x.tape().record(name, y, {x}, [xv, y, df](const Tensor& g, GradSink& sink) {
    Tensor gx(xv.shape());
    auto o = gx.mutable_values();
    const float* px = xv.data();
    const float* py = y.data();
    const float* pg = g.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = df(px[i], py[i], pg[i]);
    sink.add(0, std::move(gx));
  });
}

// View of `shape` around `axis` as [outer, n, inner].
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int d = 0; d < axis; ++d) s.outer *= shape[d];
  s.n = shape[axis];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

}  // namespace

// --- elementwise binary -----------------------------------------------------------------------

Var add(Var a, Var b) {
  Tensor out = binary_map(a.value(), b.value(), "add", [](float x, float y) { return x + y; });
  const Shape sa = a.shape(), sb = b.shape();
  return a.tape().record("add", out, {a, b}, [sa, sb](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) sink.add(0, reduce_to(g, sa));
    if (sink.wants(1)) sink.add(1, reduce_to(g, sb));
  });
}

Var sub(Var a, Var b) {
  Tensor out = binary_map(a.value(), b.value(), "sub", [](float x, float y) { return x - y; });
  const Shape sa = a.shape(), sb = b.shape();
  return a.tape().record("sub", out, {a, b}, [sa, sb](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) sink.add(0, reduce_to(g, sa));
    if (sink.wants(1)) sink.add(1, reduce_to(map(g, [](float v) { return -v; }), sb));
  });
}

Var mul(Var a, Var b) {
  Tensor av = a.value(), bv = b.value();
  Tensor out = binary_map(av, bv, "mul", [](float x, float y) { return x * y; });
  return a.tape().record("mul", out, {a, b}, [av, bv](const Tensor& g, GradSink& sink) {
    auto times = [](float x, float y) { return x * y; };
    if (sink.wants(0)) sink.add(0, reduce_to(binary_map(g, bv, "mul", times), av.shape()));
    if (sink.wants(1)) sink.add(1, reduce_to(binary_map(g, av, "mul", times), bv.shape()));
  });
}

Var div(Var a, Var b) {
  Tensor av = a.value(), bv = b.value();
  Tensor out = binary_map(av, bv, "div", [](float x, float y) { return x / y; });
  return a.tape().record("div", out, {a, b}, [av, bv, out](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) {
      sink.add(0, reduce_to(binary_map(g, bv, "div", [](float x, float y) { return x / y; }), av.shape()));
    }
    if (sink.wants(1)) {
      // d(a/b)/db = -(a/b)/b
      Tensor q = binary_map(out, bv, "div", [](float x, float y) { return -x / y; });
      Tensor gb(q.shape());
      auto o = gb.mutable_values();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[static_cast<std::int64_t>(i)] * q[static_cast<std::int64_t>(i)];
      sink.add(1, reduce_to(gb, bv.shape()));
    }
  });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator/(Var a, Var b) { return div(a, b); }

Var operator-(Var a) {
  return unary("neg", a, [](float x) { return -x; }, [](float, float, float g) { return -g; });
}

Var operator*(Var a, float s) {
  return unary("scale", a, [s](float x) { return x * s; }, [s](float, float, float g) { return g * s; });
}
Var operator*(float s, Var a) { return a * s; }

Var operator+(Var a, float s) {
  return unary("add_scalar", a, [s](float x) { return x + s; }, [](float, float, float g) { return g; });
}
Var operator+(float s, Var a) { return a + s; }
Var operator-(float s, Var a) {
  return unary("rsub_scalar", a, [s](float x) { return s - x; }, [](float, float, float g) { return -g; });
}

// --- elementwise unary ------------------------------------------------------------------------

Var exp(Var x) {
  return unary("exp", x, [](float v) { return std::exp(v); }, [](float, float y, float g) { return g * y; });
}

Var log(Var x) {
  return unary("log", x, [](float v) { return std::log(v); }, [](float v, float, float g) { return g / v; });
}

Var sin(Var x) {
  return unary("sin", x, [](float v) { return std::sin(v); }, [](float v, float, float g) { return g * std::cos(v); });
}

Var cos(Var x) {
  return unary("cos", x, [](float v) { return std::cos(v); }, [](float v, float, float g) { return -g * std::sin(v); });
}

Var tanh(Var x) {
  return unary("tanh", x, [](float v) { return std::tanh(v); },
               [](float, float y, float g) { return g * (1.0f - y * y); });
}

Var relu(Var x) {
  return unary("relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
               [](float v, float, float g) { return v > 0.0f ? g : 0.0f; });
}

namespace {
float stable_sigmoid(float v) {
  if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
  const float e = std::exp(v);
  return e / (1.0f + e);
}
}  // namespace

Var softplus(Var x) {
  return unary("softplus", x, [](float v) { return std::max(v, 0.0f) + std::log1p(std::exp(-std::abs(v))); },
               [](float v, float, float g) { return g * stable_sigmoid(v); });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x, stable_sigmoid, [](float, float y, float g) { return g * y * (1.0f - y); });
}

Var gelu(Var x) {
  constexpr float inv_sqrt2 = static_cast<float>(1.0 / std::numbers::sqrt2);
  constexpr float inv_sqrt2pi = static_cast<float>(1.0 / (std::numbers::sqrt2 * 1.7724538509055159));
  return unary(
      "gelu", x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * inv_sqrt2)); },
      [](float v, float, float g) {
        const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
        const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
        return g * (cdf + v * pdf);
      });
}

Var quick_gelu(Var x) {
  return unary(
      "quick_gelu", x, [](float v) { return v * stable_sigmoid(1.702f * v); },
      [](float v, float, float g) {
        const float s = stable_sigmoid(1.702f * v);
        return g * (s + 1.702f * v * s * (1.0f - s));
      });
}

Var square(Var x) {
  return unary("square", x, [](float v) { return v * v; }, [](float v, float, float g) { return 2.0f * v * g; });
}

Var sqrt(Var x) {
  return unary("sqrt", x, [](float v) { return std::sqrt(v); },
               [](float, float y, float g) { return g * 0.5f / y; });
}

// --- shape ------------------------------------------------------------------------------------

Var reshape(Var x, Shape shape) {
  const Shape in = x.shape();
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", out, {x}, [in](const Tensor& g, GradSink& sink) { sink.add(0, g.reshaped(in)); });
}

Var broadcast_to(Var x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape) {
    throw ShapeError("broadcast_to: cannot broadcast " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Tensor out = binary_map(x.value(), Tensor(shape, 0.0f), "broadcast_to", [](float v, float) { return v; });
  const Shape in = x.shape();
  return x.tape().record("broadcast_to", out, {x}, [in](const Tensor& g, GradSink& sink) { sink.add(0, reduce_to(g, in)); });
}

namespace {
Tensor transpose_values(const Tensor& t) {
  const std::int64_t r = t.dim(0), c = t.dim(1);
  Tensor out(Shape{c, r});
  MutMap(out.mutable_data(), c, r) = ConstMap(t.data(), r, c).transpose();
  return out;
}
}  // namespace

Var transpose(Var x) {
  if (x.value().rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(x.shape()));
  return x.tape().record("transpose", transpose_values(x.value()), {x},
                         [](const Tensor& g, GradSink& sink) { sink.add(0, transpose_values(g)); });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int ax = normalize_axis(axis, static_cast<int>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::int64_t> widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = static_cast<int>(d) == ax || s[d] == first[d];
    if (!ok) throw ShapeError("concat: shape " + shape_string(s) + " incompatible with " + shape_string(first));
    widths.push_back(s[ax]);
    out_shape[ax] += s[ax];
  }
  const AxisSplit split = split_axis(out_shape, ax);
  Tensor out(out_shape);
  float* po = out.mutable_data();
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const float* pp = parts[k].value().data();
    const std::int64_t block = widths[k] * split.inner;
    for (std::int64_t o = 0; o < split.outer; ++o) {
      std::copy_n(pp + o * block, block, po + (o * split.n * split.inner) + offset);
    }
    offset += block;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record("concat", out, inputs, [split, widths, first, ax](const Tensor& g, GradSink& sink) {
    std::int64_t off = 0;
    const float* pg = g.data();
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::int64_t block = widths[k] * split.inner;
      if (sink.wants(k)) {
        Shape s = first;
        s[ax] = widths[k];
        Tensor gk(s);
        float* pk = gk.mutable_data();
        for (std::int64_t o = 0; o < split.outer; ++o) std::copy_n(pg + o * split.n * split.inner + off, block, pk + o * block);
        sink.add(k, std::move(gk));
      }
      off += block;
    }
  });
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var x, int axis, std::int64_t begin, std::int64_t end) {
  const Shape in = x.shape();
  const int ax = normalize_axis(axis, static_cast<int>(in.size()), "slice");
  if (begin < 0 || end > in[ax] || begin >= end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis of size " +
                     std::to_string(in[ax]));
  }
  const AxisSplit split = split_axis(in, ax);
  Shape out_shape = in;
  out_shape[ax] = end - begin;
  Tensor out(out_shape);
  const std::int64_t block = (end - begin) * split.inner;
  const float* px = x.value().data();
  float* po = out.mutable_data();
  for (std::int64_t o = 0; o < split.outer; ++o) {
    std::copy_n(px + o * split.n * split.inner + begin * split.inner, block, po + o * block);
  }
  return x.tape().record("slice", out, {x}, [in, split, block, begin](const Tensor& g, GradSink& sink) {
    Tensor gx(in, 0.0f);
    float* pgx = gx.mutable_data();
    const float* pg = g.data();
    for (std::int64_t o = 0; o < split.outer; ++o) {
      std::copy_n(pg + o * block, block, pgx + o * split.n * split.inner + begin * split.inner);
    }
    sink.add(0, std::move(gx));
  });
}

// --- reductions -------------------------------------------------------------------------------

Var sum(Var x, int axis, bool keepdim) {
  const Shape in = x.shape();
  const int ax = normalize_axis(axis, static_cast<int>(in.size()), "sum");
  const AxisSplit s = split_axis(in, ax);
  Shape out_shape = in;
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  Tensor out(out_shape, 0.0f);
  const float* px = x.value().data();
  float* po = out.mutable_data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t k = 0; k < s.n; ++k) {
      const float* row = px + (o * s.n + k) * s.inner;
      float* dst = po + o * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  return x.tape().record("sum", out, {x}, [in, s](const Tensor& g, GradSink& sink) {
    Tensor gx(in);
    float* pgx = gx.mutable_data();
    const float* pg = g.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t k = 0; k < s.n; ++k) std::copy_n(pg + o * s.inner, s.inner, pgx + (o * s.n + k) * s.inner);
    }
    sink.add(0, std::move(gx));
  });
}

Var sum(Var x) {
  const Shape in = x.shape();
  double acc = 0.0;
  for (float v : x.value().values()) acc += v;
  return x.tape().record("sum_all", Tensor::scalar(static_cast<float>(acc)), {x},
                         [in](const Tensor& g, GradSink& sink) { sink.add(0, Tensor(in, g.item())); });
}

Var mean(Var x, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, x.value().rank(), "mean");
  return sum(x, ax, keepdim) * (1.0f / static_cast<float>(x.dim(ax)));
}

Var mean(Var x) { return sum(x) * (1.0f / static_cast<float>(x.value().size())); }

Var cumsum(Var x, int axis, bool exclusive) {
  const Shape in = x.shape();
  const int ax = normalize_axis(axis, static_cast<int>(in.size()), "cumsum");
  const AxisSplit s = split_axis(in, ax);
  Tensor out(in, 0.0f);
  const float* px = x.value().data();
  float* po = out.mutable_data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      float acc = 0.0f;
      for (std::int64_t k = 0; k < s.n; ++k) {
        const std::int64_t idx = (o * s.n + k) * s.inner + i;
        if (exclusive) {
          po[idx] = acc;
          acc += px[idx];
        } else {
          acc += px[idx];
          po[idx] = acc;
        }
      }
    }
  }
  return x.tape().record("cumsum", out, {x}, [in, s, exclusive](const Tensor& g, GradSink& sink) {
    Tensor gx(in, 0.0f);
    float* pgx = gx.mutable_data();
    const float* pg = g.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        float acc = 0.0f;
        for (std::int64_t k = s.n - 1; k >= 0; --k) {
          const std::int64_t idx = (o * s.n + k) * s.inner + i;
          if (exclusive) {
            pgx[idx] = acc;
            acc += pg[idx];
          } else {
            acc += pg[idx];
            pgx[idx] = acc;
          }
        }
      }
    }
    sink.add(0, std::move(gx));
  });
}

Var dot(Var a, Var b) {
  if (a.value().rank() != 1 || a.shape() != b.shape()) {
    throw ShapeError("dot: expected equal rank-1 shapes, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Tensor av = a.value(), bv = b.value();
  double acc = 0.0;
  for (std::int64_t i = 0; i < av.size(); ++i) acc += static_cast<double>(av[i]) * bv[i];
  return a.tape().record("dot", Tensor::scalar(static_cast<float>(acc)), {a, b}, [av, bv](const Tensor& g, GradSink& sink) {
    const float s = g.item();
    if (sink.wants(0)) sink.add(0, map(bv, [s](float v) { return v * s; }));
    if (sink.wants(1)) sink.add(1, map(av, [s](float v) { return v * s; }));
  });
}

// --- matmul / softmax / layer norm ------------------------------------------------------------

Var matmul(Var a, Var b, bool ta, bool tb) {
  Tensor av = a.value(), bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  const std::int64_t ar = av.dim(0), ac = av.dim(1), br = bv.dim(0), bc = bv.dim(1);
  const std::int64_t m = ta ? ac : ar, k = ta ? ar : ac;
  const std::int64_t k2 = tb ? bc : br, n = tb ? br : bc;
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_string(av.shape()) + (ta ? "^T" : "") + " x " +
                     shape_string(bv.shape()) + (tb ? "^T" : ""));
  }
  Tensor out(Shape{m, n});
  {
    ConstMap A(av.data(), ar, ac), B(bv.data(), br, bc);
    MutMap C(out.mutable_data(), m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return a.tape().record("matmul", out, {a, b}, [av, bv, ta, tb, m, n](const Tensor& g, GradSink& sink) {
    const std::int64_t ar = av.dim(0), ac = av.dim(1), br = bv.dim(0), bc = bv.dim(1);
    ConstMap A(av.data(), ar, ac), B(bv.data(), br, bc), G(g.data(), m, n);
    if (sink.wants(0)) {
      Tensor ga(av.shape());
      MutMap GA(ga.mutable_data(), ar, ac);
      if (!ta) {
        if (!tb) GA.noalias() = G * B.transpose();
        else GA.noalias() = G * B;
      } else {
        if (!tb) GA.noalias() = B * G.transpose();
        else GA.noalias() = B.transpose() * G.transpose();
      }
      sink.add(0, std::move(ga));
    }
    if (sink.wants(1)) {
      Tensor gb(bv.shape());
      MutMap GB(gb.mutable_data(), br, bc);
      if (!tb) {
        if (!ta) GB.noalias() = A.transpose() * G;
        else GB.noalias() = A * G;
      } else {
        if (!ta) GB.noalias() = G.transpose() * A;
        else GB.noalias() = G.transpose() * A.transpose();
      }
      sink.add(1, std::move(gb));
    }
  });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("softmax: expected rank >= 1");
  const std::int64_t n = xv.dim(-1);
  const std::int64_t rows = xv.size() / std::max<std::int64_t>(n, 1);
  Tensor y(xv.shape());
  const float* px = xv.data();
  float* py = y.mutable_data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* in = px + r * n;
    float* out = py + r * n;
    const float mx = *std::max_element(in, in + n);
    float total = 0.0f;
    for (std::int64_t i = 0; i < n; ++i) {
      out[i] = std::exp(in[i] - mx);
      total += out[i];
    }
    for (std::int64_t i = 0; i < n; ++i) out[i] /= total;
  }
  return x.tape().record("softmax", y, {x}, [y, n, rows](const Tensor& g, GradSink& sink) {
    Tensor gx(y.shape());
    const float* py = y.data();
    const float* pg = g.data();
    float* po = gx.mutable_data();
    for (std::int64_t r = 0; r < rows; ++r) {
      float s = 0.0f;
      for (std::int64_t i = 0; i < n; ++i) s += pg[r * n + i] * py[r * n + i];
      for (std::int64_t i = 0; i < n; ++i) po[r * n + i] = py[r * n + i] * (pg[r * n + i] - s);
    }
    sink.add(0, std::move(gx));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, float eps) {
  const Tensor& xv = x.value();
  const std::int64_t n = xv.dim(-1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw ShapeError("layer_norm: affine terms " + shape_string(gamma.shape()) + "/" + shape_string(beta.shape()) +
                     " do not match feature size " + std::to_string(n));
  }
  const std::int64_t rows = xv.size() / n;
  Tensor xhat(xv.shape());
  Tensor rstd(Shape{rows});
  Tensor y(xv.shape());
  {
    const float* px = xv.data();
    const float* pgm = gamma.value().data();
    const float* pbt = beta.value().data();
    float* ph = xhat.mutable_data();
    float* pr = rstd.mutable_data();
    float* py = y.mutable_data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* in = px + r * n;
      float mu = 0.0f;
      for (std::int64_t i = 0; i < n; ++i) mu += in[i];
      mu /= static_cast<float>(n);
      float var = 0.0f;
      for (std::int64_t i = 0; i < n; ++i) var += (in[i] - mu) * (in[i] - mu);
      var /= static_cast<float>(n);
      const float rs = 1.0f / std::sqrt(var + eps);
      pr[r] = rs;
      for (std::int64_t i = 0; i < n; ++i) {
        ph[r * n + i] = (in[i] - mu) * rs;
        py[r * n + i] = pgm[i] * ph[r * n + i] + pbt[i];
      }
    }
  }
  Tensor gv = gamma.value();
  return x.tape().record("layer_norm", y, {x, gamma, beta}, [xhat, rstd, gv, n, rows](const Tensor& g, GradSink& sink) {
    const float* pg = g.data();
    const float* ph = xhat.data();
    const float* pgm = gv.data();
    if (sink.wants(0)) {
      Tensor gx(xhat.shape());
      float* po = gx.mutable_data();
      for (std::int64_t r = 0; r < rows; ++r) {
        float m1 = 0.0f, m2 = 0.0f;
        for (std::int64_t i = 0; i < n; ++i) {
          const float d = pg[r * n + i] * pgm[i];
          m1 += d;
          m2 += d * ph[r * n + i];
        }
        m1 /= static_cast<float>(n);
        m2 /= static_cast<float>(n);
        for (std::int64_t i = 0; i < n; ++i) {
          const float d = pg[r * n + i] * pgm[i];
          po[r * n + i] = rstd[r] * (d - m1 - ph[r * n + i] * m2);
        }
      }
      sink.add(0, std::move(gx));
    }
    if (sink.wants(1) || sink.wants(2)) {
      Tensor gg(Shape{n}, 0.0f), gb(Shape{n}, 0.0f);
      float* pgg = gg.mutable_data();
      float* pgb = gb.mutable_data();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t i = 0; i < n; ++i) {
          pgg[i] += pg[r * n + i] * ph[r * n + i];
          pgb[i] += pg[r * n + i];
        }
      }
      if (sink.wants(1)) sink.add(1, std::move(gg));
      if (sink.wants(2)) sink.add(2, std::move(gb));
    }
  });
}

Var l2_normalize(Var x, float eps) {
  Var norm = sqrt(sum(square(x)) + eps);
  return x / norm;
}

// --- resampling -------------------------------------------------------------------------------

ResampleWeights bilinear_weights(std::int64_t source_size, std::int64_t target_size) {
  if (source_size < 1 || target_size < 1) throw ShapeError("bilinear_weights: sizes must be positive");
  ResampleWeights w;
  w.source_size = source_size;
  w.taps.resize(static_cast<std::size_t>(target_size));
  const double scale = static_cast<double>(source_size) / static_cast<double>(target_size);
  for (std::int64_t i = 0; i < target_size; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(source_size - 1));
    const std::int64_t lo = static_cast<std::int64_t>(std::floor(s));
    const std::int64_t hi = std::min(lo + 1, source_size - 1);
    const float frac = static_cast<float>(s - static_cast<double>(lo));
    auto& taps = w.taps[static_cast<std::size_t>(i)];
    if (hi == lo || frac == 0.0f) {
      taps.emplace_back(lo, 1.0f);
    } else {
      taps.emplace_back(lo, 1.0f - frac);
      taps.emplace_back(hi, frac);
    }
  }
  return w;
}

ResampleWeights area_weights(std::int64_t source_size, std::int64_t target_size) {
  if (source_size < 1 || target_size < 1) throw ShapeError("area_weights: sizes must be positive");
  ResampleWeights w;
  w.source_size = source_size;
  w.taps.resize(static_cast<std::size_t>(target_size));
  const double cell = static_cast<double>(source_size) / static_cast<double>(target_size);
  for (std::int64_t i = 0; i < target_size; ++i) {
    const double lo = static_cast<double>(i) * cell;
    const double hi = static_cast<double>(i + 1) * cell;
    for (std::int64_t y = static_cast<std::int64_t>(std::floor(lo)); y < source_size && static_cast<double>(y) < hi; ++y) {
      const double overlap = std::min(hi, static_cast<double>(y + 1)) - std::max(lo, static_cast<double>(y));
      if (overlap > 0.0) w.taps[static_cast<std::size_t>(i)].emplace_back(y, static_cast<float>(overlap / cell));
    }
  }
  return w;
}

namespace {

// Applies `w` along axis 0 of a [S, inner] block, or its transpose when `adjoint` is set.
Tensor apply_rows(const Tensor& in, const ResampleWeights& w, std::int64_t inner, bool adjoint) {
  const std::int64_t targets = static_cast<std::int64_t>(w.taps.size());
  Tensor out(Shape{adjoint ? w.source_size : targets, inner}, 0.0f);
  const float* pi = in.data();
  float* po = out.mutable_data();
  for (std::int64_t t = 0; t < targets; ++t) {
    for (const auto& [s, wt] : w.taps[static_cast<std::size_t>(t)]) {
      const float* src = adjoint ? pi + t * inner : pi + s * inner;
      float* dst = adjoint ? po + s * inner : po + t * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += wt * src[i];
    }
  }
  return out;
}

// Applies `w` along axis 1 of a [R, S, C] block, or its transpose when `adjoint` is set.
Tensor apply_cols(const Tensor& in, const ResampleWeights& w, std::int64_t rows, std::int64_t channels, bool adjoint) {
  const std::int64_t targets = static_cast<std::int64_t>(w.taps.size());
  const std::int64_t in_w = adjoint ? targets : w.source_size;
  const std::int64_t out_w = adjoint ? w.source_size : targets;
  Tensor out(Shape{rows, out_w, channels}, 0.0f);
  const float* pi = in.data();
  float* po = out.mutable_data();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t t = 0; t < targets; ++t) {
      for (const auto& [s, wt] : w.taps[static_cast<std::size_t>(t)]) {
        const std::int64_t from = adjoint ? t : s;
        const std::int64_t to = adjoint ? s : t;
        const float* src = pi + (r * in_w + from) * channels;
        float* dst = po + (r * out_w + to) * channels;
        for (std::int64_t c = 0; c < channels; ++c) dst[c] += wt * src[c];
      }
    }
  }
  return out;
}

}  // namespace

Var resample(Var image, const ResampleWeights& rows, const ResampleWeights& cols) {
  const Shape in = image.shape();
  if (in.size() != 3 || in[0] != rows.source_size || in[1] != cols.source_size) {
    throw ShapeError("resample: image " + shape_string(in) + " does not match weights for " +
                     std::to_string(rows.source_size) + "x" + std::to_string(cols.source_size));
  }
  const std::int64_t c = in[2];
  const std::int64_t th = static_cast<std::int64_t>(rows.taps.size());
  Tensor tmp = apply_rows(image.value(), rows, in[1] * c, false);
  Tensor out = apply_cols(tmp.reshaped(Shape{th, in[1], c}), cols, th, c, false);
  return image.tape().record("resample", out, {image}, [rows, cols, in, th, c](const Tensor& g, GradSink& sink) {
    Tensor gtmp = apply_cols(g, cols, th, c, true);
    Tensor gin = apply_rows(gtmp.reshaped(Shape{th, in[1] * c}), rows, in[1] * c, true);
    sink.add(0, gin.reshaped(in));
  });
}

Var patchify(Var image, std::int64_t patch) {
  const Shape in = image.shape();
  if (in.size() != 3 || patch < 1 || in[0] % patch != 0 || in[1] % patch != 0) {
    throw ShapeError("patchify: image " + shape_string(in) + " not divisible into " + std::to_string(patch) + "px patches");
  }
  const std::int64_t gh = in[0] / patch, gw = in[1] / patch, c = in[2];
  const std::int64_t cols = patch * patch * c;
  // index[k] = source offset of output element k
  std::vector<std::int64_t> index(static_cast<std::size_t>(gh * gw * cols));
  std::size_t k = 0;
  for (std::int64_t py = 0; py < gh; ++py) {
    for (std::int64_t px = 0; px < gw; ++px) {
      for (std::int64_t y = 0; y < patch; ++y) {
        for (std::int64_t x = 0; x < patch; ++x) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            index[k++] = ((py * patch + y) * in[1] + (px * patch + x)) * c + ch;
          }
        }
      }
    }
  }
  Tensor out(Shape{gh * gw, cols});
  const float* pi = image.value().data();
  float* po = out.mutable_data();
  for (std::size_t i = 0; i < index.size(); ++i) po[i] = pi[index[i]];
  return image.tape().record("patchify", out, {image}, [index = std::move(index), in](const Tensor& g, GradSink& sink) {
    Tensor gi(in, 0.0f);
    float* pgi = gi.mutable_data();
    const float* pg = g.data();
    for (std::size_t i = 0; i < index.size(); ++i) pgi[index[i]] += pg[i];
    sink.add(0, std::move(gi));
  });
}

// --- rematerialization ------------------------------------------------------------------------

Var checkpointed(std::span<const Var> inputs, const BlockFn& block) {
  if (inputs.empty()) throw Error("checkpointed: block needs at least one input");
  std::vector<Tensor> values;
  std::vector<bool> grad_mask;
  for (const Var& v : inputs) {
    values.push_back(v.value());
    grad_mask.push_back(v.requires_grad());
  }
  auto run = [block, values, grad_mask](Tape& sub) {
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < values.size(); ++i) {
      leaves.push_back(grad_mask[i] ? sub.parameter(values[i]) : sub.constant(values[i]));
    }
    Var out = block(sub, leaves);
    return std::make_pair(leaves, out);
  };
  Tensor out_value;
  {
    Tape sub;
    out_value = run(sub).second.value();
  }
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return inputs[0].tape().record("checkpointed", out_value, ins, [run](const Tensor& g, GradSink& sink) {
    Tape sub;
    auto [leaves, out] = run(sub);
    Gradients grads = sub.backward(out, g);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (sink.wants(i)) sink.add(i, grads.of(leaves[i]));
    }
  });
}

}  // namespace dietfield::diff
