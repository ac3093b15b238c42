#include "dietfield/field.hpp"

#include <algorithm>
#include <cmath>

#include "dietfield/error.hpp"
#include "dietfield/rng.hpp"

namespace dietfield::field {

using diff::Shape;
using diff::Tensor;
using diff::Var;

void EncodingConfig::validate() const {
  if (num_freqs_position < 1) throw ValidationError("encoding: num_freqs_position must be >= 1");
  if (num_freqs_direction < 0) throw ValidationError("encoding: num_freqs_direction must be >= 0");
}

void FieldConfig::validate() const {
  if (depth < 2) throw ValidationError("field: depth must be >= 2");
  if (width < 1) throw ValidationError("field: width must be >= 1");
  for (int s : skip_layers) {
    if (s < 1 || s >= depth) throw ValidationError("field: skip layer " + std::to_string(s) + " outside [1, depth)");
  }
  if (!(position_scale > 0.0f)) throw ValidationError("field: position_scale must be positive");
}

std::int64_t encoded_size(std::int64_t dims, int num_freqs, bool include_input) {
  return dims * (include_input ? 1 : 0) + 2 * dims * num_freqs;
}

Tensor positional_encode(const Tensor& points, int num_freqs, bool include_input) {
  if (points.rank() != 2) throw ShapeError("positional_encode: expected N x D points, got " + diff::shape_string(points.shape()));
  const std::int64_t n = points.dim(0), d = points.dim(1);
  const std::int64_t width = encoded_size(d, num_freqs, include_input);
  Tensor out(Shape{n, width});
  float* po = out.mutable_data();
  const float* px = points.data();
  for (std::int64_t r = 0; r < n; ++r) {
    float* row = po + r * width;
    const float* x = px + r * d;
    std::int64_t col = 0;
    if (include_input) {
      for (std::int64_t c = 0; c < d; ++c) row[col++] = x[c];
    }
    float freq = 1.0f;
    for (int k = 0; k < num_freqs; ++k) {
      for (std::int64_t c = 0; c < d; ++c) row[col + c] = std::sin(freq * x[c]);
      for (std::int64_t c = 0; c < d; ++c) row[col + d + c] = std::cos(freq * x[c]);
      col += 2 * d;
      freq *= 2.0f;
    }
  }
  return out;
}

Var positional_encode(Var points, int num_freqs, bool include_input) {
  if (num_freqs < 0) throw ValidationError("positional_encode: negative frequency count");
  Tensor pts = points.value();
  Tensor out = positional_encode(pts, num_freqs, include_input);
  return points.tape().record("positional_encode", out, {points},
                              [pts, out, num_freqs, include_input](const Tensor& g, diff::GradSink& sink) {
    const std::int64_t n = pts.dim(0), d = pts.dim(1);
    const std::int64_t width = out.dim(1);
    Tensor gx(pts.shape(), 0.0f);
    float* pgx = gx.mutable_data();
    const float* pg = g.data();
    const float* po = out.data();
    for (std::int64_t r = 0; r < n; ++r) {
      const float* grow = pg + r * width;
      const float* orow = po + r * width;
      float* dst = pgx + r * d;
      std::int64_t col = 0;
      if (include_input) {
        for (std::int64_t c = 0; c < d; ++c) dst[c] += grow[col++];
      }
      float freq = 1.0f;
      for (int k = 0; k < num_freqs; ++k) {
        for (std::int64_t c = 0; c < d; ++c) {
          // d sin(f x) = f cos(f x); d cos(f x) = -f sin(f x)
          dst[c] += freq * (grow[col + c] * orow[col + d + c] - grow[col + d + c] * orow[col + c]);
        }
        col += 2 * d;
        freq *= 2.0f;
      }
    }
    sink.add(0, std::move(gx));
  });
}

std::map<std::string, Shape> param_shapes(const FieldConfig& field, const EncodingConfig& encoding) {
  field.validate();
  encoding.validate();
  const std::int64_t in_x = encoded_size(3, encoding.num_freqs_position, encoding.include_input);
  const std::int64_t in_d = encoded_size(3, encoding.num_freqs_direction, encoding.include_input);
  const std::int64_t w = field.width;
  std::map<std::string, Shape> shapes;
  for (int l = 0; l < field.depth; ++l) {
    std::int64_t fan_in = l == 0 ? in_x : w;
    if (l > 0 && std::count(field.skip_layers.begin(), field.skip_layers.end(), l)) fan_in += in_x;
    shapes["layer" + std::to_string(l) + ".weight"] = {fan_in, w};
    shapes["layer" + std::to_string(l) + ".bias"] = {w};
  }
  shapes["sigma.weight"] = {w, 1};
  shapes["sigma.bias"] = {1};
  if (field.view_dependent) {
    const std::int64_t half = std::max<std::int64_t>(w / 2, 1);
    shapes["feature.weight"] = {w, w};
    shapes["feature.bias"] = {w};
    shapes["view.weight"] = {w + in_d, half};
    shapes["view.bias"] = {half};
    shapes["rgb.weight"] = {half, 3};
  } else {
    shapes["rgb.weight"] = {w, 3};
  }
  shapes["rgb.bias"] = {3};
  return shapes;
}

FieldParams init_params(const FieldConfig& field, const EncodingConfig& encoding, std::uint64_t seed) {
  FieldParams params;
  Rng rng(seed);
  // std::map iteration is name-ordered, so draws are tied to names rather than insertion order.
  for (const auto& [name, shape] : param_shapes(field, encoding)) {
    Tensor t(shape, 0.0f);
    if (shape.size() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (float& v : t.mutable_values()) v = static_cast<float>(rng.uniform(-limit, limit));
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

FieldVars as_parameters(diff::Tape& tape, const FieldParams& params) {
  FieldVars vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.parameter(t));
  return vars;
}

FieldVars as_constants(diff::Tape& tape, const FieldParams& params) {
  FieldVars vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.constant(t));
  return vars;
}

namespace {

const Var& param(const FieldVars& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("field: missing parameter '" + name + "'");
  return it->second;
}

Var linear(Var x, const Var& w, const Var& b) { return diff::matmul(x, w) + b; }

Var hidden_layer(Var x, const Var& w, const Var& b, bool rematerialize) {
  if (!rematerialize) return diff::relu(linear(x, w, b));
  const Var inputs[] = {x, w, b};
  return diff::checkpointed(inputs, [](diff::Tape&, std::span<const Var> in) {
    return diff::relu(diff::matmul(in[0], in[1]) + in[2]);
  });
}

}  // namespace

FieldOutput field_eval(const FieldVars& params, Var positions, Var directions, const FieldConfig& field,
                       const EncodingConfig& encoding) {
  if (positions.value().rank() != 2 || positions.dim(1) != 3) {
    throw ShapeError("field_eval: positions must be N x 3, got " + diff::shape_string(positions.shape()));
  }
  Var scaled = field.position_scale == 1.0f ? positions : positions * field.position_scale;
  Var enc_x = positional_encode(scaled, encoding.num_freqs_position, encoding.include_input);
  Var h = enc_x;
  for (int l = 0; l < field.depth; ++l) {
    if (l > 0 && std::count(field.skip_layers.begin(), field.skip_layers.end(), l)) h = diff::concat({enc_x, h}, 1);
    const std::string prefix = "layer" + std::to_string(l);
    h = hidden_layer(h, param(params, prefix + ".weight"), param(params, prefix + ".bias"), field.rematerialize);
  }
  FieldOutput out;
  Var raw_sigma = linear(h, param(params, "sigma.weight"), param(params, "sigma.bias"));
  out.sigma = diff::reshape(diff::softplus(raw_sigma), {positions.dim(0)});
  if (field.view_dependent) {
    if (directions.shape() != positions.shape()) {
      throw ShapeError("field_eval: directions " + diff::shape_string(directions.shape()) + " do not match positions " +
                       diff::shape_string(positions.shape()));
    }
    Var feature = linear(h, param(params, "feature.weight"), param(params, "feature.bias"));
    Var enc_d = positional_encode(directions, encoding.num_freqs_direction, encoding.include_input);
    Var v = diff::relu(linear(diff::concat({feature, enc_d}, 1), param(params, "view.weight"), param(params, "view.bias")));
    out.rgb = diff::sigmoid(linear(v, param(params, "rgb.weight"), param(params, "rgb.bias")));
  } else {
    out.rgb = diff::sigmoid(linear(h, param(params, "rgb.weight"), param(params, "rgb.bias")));
  }
  return out;
}

}  // namespace dietfield::field
