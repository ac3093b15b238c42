#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dietfield/autodiff.hpp"

namespace dietfield::field {

struct EncodingConfig {
  int num_freqs_position = 10;  // frequencies 2^0 .. 2^(L-1)
  int num_freqs_direction = 4;
  bool include_input = true;

  void validate() const;
};

// MLP layout. Hidden layer l (0-based) maps to `width` units with ReLU; layers listed in
// `skip_layers` (l > 0) take the encoded position concatenated to their input.
struct FieldConfig {
  int depth = 8;
  int width = 256;
  std::vector<int> skip_layers{4};
  bool view_dependent = true;
  float position_scale = 1.0f;  // positions are multiplied by this before encoding
  bool rematerialize = false;   // recompute hidden activations during backward

  void validate() const;
};

// Weights are stored input-major ([fan_in, fan_out]); names are "layer<l>.weight", "layer<l>.bias",
// "sigma.*", "rgb.*" and, when view dependent, "feature.*" and "view.*".
using FieldParams = diff::NamedTensors;
using FieldVars = std::map<std::string, diff::Var>;

struct FieldOutput {
  diff::Var rgb;    // N x 3 in [0,1]
  diff::Var sigma;  // N, nonnegative
};

std::int64_t encoded_size(std::int64_t dims, int num_freqs, bool include_input);

// [x, sin(2^0 x), cos(2^0 x), ..., sin(2^(L-1) x), cos(2^(L-1) x)], each block N x D.
diff::Var positional_encode(diff::Var points, int num_freqs, bool include_input);
diff::Tensor positional_encode(const diff::Tensor& points, int num_freqs, bool include_input);

// Glorot-uniform weights, zero biases; deterministic in `seed`.
FieldParams init_params(const FieldConfig& field, const EncodingConfig& encoding, std::uint64_t seed);

// Expected parameter shapes for a configuration.
std::map<std::string, diff::Shape> param_shapes(const FieldConfig& field, const EncodingConfig& encoding);

FieldVars as_parameters(diff::Tape& tape, const FieldParams& params);
FieldVars as_constants(diff::Tape& tape, const FieldParams& params);

// Density from the position-only trunk; color from the trunk plus encoded direction when view
// dependent. `directions` is ignored otherwise.
FieldOutput field_eval(const FieldVars& params, diff::Var positions, diff::Var directions, const FieldConfig& field,
                       const EncodingConfig& encoding);

}  // namespace dietfield::field
