#pragma once

// Image embedding functions: a Vision Transformer evaluated from a weight container, and a cheap
// seeded stand-in with the same interface.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "json.hpp"

#include "dietfield/autodiff.hpp"
#include "dietfield/container.hpp"

namespace dietfield::semantic {

// Unit-norm feature vector.
using Embedding = diff::Tensor;

class Encoder {
 public:
  virtual ~Encoder() = default;

  // H x W x 3 image in [0,1] -> unit-norm D vector, differentiable w.r.t. the image.
  virtual diff::Var encode(diff::Tape& tape, diff::Var image) const = 0;
  virtual int dim() const = 0;
  virtual std::string describe() const = 0;

  // Value-only convenience.
  Embedding embed(const diff::Tensor& image) const;
};

struct ViTSpec {
  int image_resolution = 224;
  int patch_size = 32;
  int hidden_dim = 768;
  int num_layers = 12;
  int num_heads = 12;
  int mlp_ratio = 4;
  int output_dim = 512;
  std::array<float, 3> mean{0.48145466f, 0.4578275f, 0.40821073f};
  std::array<float, 3> std{0.26862954f, 0.26130258f, 0.27577711f};
  std::string resize_filter = "bilinear";
  std::string activation = "gelu";  // or "quick_gelu"
  bool ln_pre = true;               // layer norm after adding position embeddings

  void validate() const;
  int grid() const { return image_resolution / patch_size; }
  int tokens() const { return 1 + grid() * grid(); }

  nlohmann::json to_json() const;
  static ViTSpec from_json(const nlohmann::json& j);
};

using WeightStore = diff::NamedTensors;

// Tensor name -> shape required by `spec`. Linear weights are [fan_in, fan_out].
std::map<std::string, diff::Shape> vit_shapes(const ViTSpec& spec);

class ViTEncoder final : public Encoder {
 public:
  // Validates `weights` against the spec; throws naming the first missing or misshapen tensor.
  ViTEncoder(ViTSpec spec, WeightStore weights);

  diff::Var encode(diff::Tape& tape, diff::Var image) const override;
  int dim() const override { return spec_.output_dim; }
  std::string describe() const override;
  const ViTSpec& spec() const { return spec_; }
  // Resized, normalized, linearly embedded patches (grid^2 x hidden), before class token and
  // position embeddings.
  diff::Var patch_tokens(diff::Tape& tape, diff::Var image) const;

 private:
  ViTSpec spec_;
  WeightStore weights_;
};

inline constexpr io::Magic kVitMagic{'V', 'I', 'T', 'W'};
inline constexpr std::uint32_t kVitVersion = 1;

std::shared_ptr<ViTEncoder> load_vit(const std::filesystem::path& path);
// Seeded random weights for `spec` written as a loadable container. Same seed -> same bytes.
void make_test_weights(const ViTSpec& spec, std::uint64_t seed, const std::filesystem::path& path);
WeightStore random_vit_weights(const ViTSpec& spec, std::uint64_t seed);

// 4 x 4 area pooling, centering (x - 0.5), fixed Gaussian projection to D, tanh, L2 normalize.
class BaselineEncoder final : public Encoder {
 public:
  BaselineEncoder(std::uint64_t seed, int dim);

  diff::Var encode(diff::Tape& tape, diff::Var image) const override;
  int dim() const override { return dim_; }
  std::string describe() const override;

 private:
  std::uint64_t seed_;
  int dim_;
  diff::Tensor projection_;  // 48 x D
};

// Small spec for tests and fixtures: 2 layers, width 64, patch 8 at 32 x 32.
ViTSpec toy_vit_spec();

}  // namespace dietfield::semantic
