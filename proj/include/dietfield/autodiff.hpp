#pragma once

// Reverse-mode automatic differentiation over dense float32 tensors.
//
// Graphs are recorded eagerly: every op computes its value immediately and appends a node to a
// Tape holding the op kind, input node ids and the backward rule (with whatever forward values
// the rule needs). Node ids are assigned in creation order, so the tape is topologically sorted
// by construction and backward() is a single reverse sweep that visits each node at most once.
//
// A "graph" in the functional sense (inputs -> outputs) is any callable that records onto a tape;
// see GraphFn in gradcheck.hpp.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dietfield/tensor.hpp"

namespace dietfield::diff {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Receives the gradients a node's backward rule produces for each of its inputs.
class GradSink {
 public:
  // True if input k needs a gradient; rules skip work for inputs that do not.
  bool wants(std::size_t k) const;
  void add(std::size_t k, Tensor grad);

 private:
  friend class Tape;
  GradSink(Tape& tape, std::span<const int> inputs) : tape_(tape), inputs_(inputs) {}

  Tape& tape_;
  std::span<const int> inputs_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

// Gradients of one backward pass, keyed by node.
class Gradients {
 public:
  // Gradient with respect to `v`; all zeros when `v` does not influence the output.
  Tensor of(Var v) const;
  bool has(Var v) const { return grads_.count(v.id()) > 0; }

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::map<int, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is tracked.
  Var parameter(Tensor value);
  // Leaf treated as a constant.
  Var constant(Tensor value);

  // Appends an op node. The backward rule is dropped when no input requires a gradient.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }
  std::string_view op(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].op; }
  std::size_t node_count() const { return nodes_.size(); }

  // d(output)/d(leaf) for every parameter leaf. `output` must hold exactly one element.
  Gradients backward(Var output);
  // Vector-Jacobian product seeded with `seed` (same shape as `output`).
  Gradients backward(Var output, const Tensor& seed);

 private:
  friend class GradSink;
  friend class Var;

  struct Node {
    std::string_view op;
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  void accumulate(int id, Tensor grad);

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> pending_;  // gradient accumulators during backward()
};

// --- elementwise (numpy-style broadcasting) ---------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, float s);
Var operator*(float s, Var a);
Var operator+(Var a, float s);
Var operator+(float s, Var a);
Var operator-(float s, Var a);

Var exp(Var x);
Var log(Var x);
Var sin(Var x);
Var cos(Var x);
Var tanh(Var x);
Var relu(Var x);
// log(1 + e^x), evaluated as max(x, 0) + log1p(e^{-|x|}).
Var softplus(Var x);
Var sigmoid(Var x);
// Exact GELU: x * Phi(x).
Var gelu(Var x);
// x * sigmoid(1.702 x), the variant used by CLIP checkpoints.
Var quick_gelu(Var x);
Var square(Var x);
Var sqrt(Var x);

// --- shape ------------------------------------------------------------------------------------
Var reshape(Var x, Shape shape);
Var broadcast_to(Var x, const Shape& shape);
Var transpose(Var x);  // rank 2
Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var slice(Var x, int axis, std::int64_t begin, std::int64_t end);

// --- reductions -------------------------------------------------------------------------------
Var sum(Var x, int axis, bool keepdim = false);
Var sum(Var x);  // all elements -> scalar
Var mean(Var x, int axis, bool keepdim = false);
Var mean(Var x);
// Running sum along `axis`; `exclusive` shifts by one so element i holds the sum of elements < i.
Var cumsum(Var x, int axis, bool exclusive = false);
Var dot(Var a, Var b);  // rank-1 inputs -> scalar

// --- linear algebra and normalization -----------------------------------------------------------
// Rank-2 product, optionally transposing either operand.
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
Var softmax(Var x);  // over the last axis
// Normalizes over the last axis, then applies gamma * x + beta (both rank-1 of that size).
Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
// x / ||x||_2 over all elements.
Var l2_normalize(Var x, float eps = 1e-12f);

// --- image resampling -------------------------------------------------------------------------
// Separable linear resampling of an H x W x C image: out[i,j,c] = sum_{y,x} R[i,y] C[j,x] in[y,x,c].
// Row and column weight matrices are given sparsely as (source index, weight) lists per output.
struct ResampleWeights {
  std::int64_t source_size = 0;
  std::vector<std::vector<std::pair<std::int64_t, float>>> taps;  // one entry per output index
};
ResampleWeights bilinear_weights(std::int64_t source_size, std::int64_t target_size);
// Exact area averaging into `target_size` equal cells.
ResampleWeights area_weights(std::int64_t source_size, std::int64_t target_size);
Var resample(Var image, const ResampleWeights& rows, const ResampleWeights& cols);

// H x W x C image -> (H/p * W/p) x (p*p*C) matrix of non-overlapping patches, row-major over
// patches, each patch flattened in (row, col, channel) order.
Var patchify(Var image, std::int64_t patch);

// --- rematerialization ------------------------------------------------------------------------
using BlockFn = std::function<Var(Tape&, std::span<const Var>)>;
// Runs `block` on a private tape and keeps only its output. During backward the block is re-run to
// rebuild its intermediate activations, trading compute for memory.
Var checkpointed(std::span<const Var> inputs, const BlockFn& block);

}  // namespace dietfield::diff
