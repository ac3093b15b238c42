#pragma once

#include <cstdint>
#include <optional>

#include "dietfield/autodiff.hpp"
#include "dietfield/field.hpp"
#include "dietfield/rng.hpp"
#include "dietfield/scene.hpp"

namespace dietfield::render {

struct SamplingConfig {
  int n_coarse = 64;
  int n_fine = 128;               // 0 disables hierarchical sampling
  bool perturb = true;            // jitter stratified samples within their bins
  bool separate_fine_network = true;  // otherwise the coarse network also serves the fine pass
  std::int64_t chunk_rays = 2048;

  void validate() const;
};

// Per-ray sample depths. Sample i represents the interval [t_i, t_i + delta_i); the last interval
// ends at the far bound.
struct SampleSet {
  diff::Tensor t;       // rays x samples, strictly increasing per ray
  diff::Tensor deltas;  // rays x samples, positive
  // Shared bin edges (samples + 1) for stratified sets; empty after merging.
  std::vector<double> edges;

  std::int64_t rays() const { return t.dim(0); }
  std::int64_t samples() const { return t.dim(1); }
};

struct RenderOutput {
  diff::Var rgb;      // rays x 3
  diff::Var weights;  // rays x samples
  diff::Var acc;      // rays
  diff::Var depth;    // rays, sum(w t) / max(acc, eps)
};

// Deltas t_{i+1} - t_i with the last one reaching `far`.
diff::Tensor sample_deltas(const diff::Tensor& t, double far);

SampleSet stratified_samples(std::int64_t rays, double near, double far, int n_coarse, Rng& rng, bool perturb);

// Inverse-transform samples from the piecewise-constant density over `coarse`'s bins with mass
// proportional to weights + 1e-5, merged with the coarse depths. Uses evenly spaced quantiles
// instead of random ones when `perturb` is false. All-zero weights degrade to a uniform density.
SampleSet hierarchical_samples(const SampleSet& coarse, const diff::Tensor& coarse_weights, int n_fine, double far,
                               Rng& rng, bool perturb);

// Quadrature of the volume rendering integral: w_i = T_i (1 - exp(-sigma_i delta_i)),
// T_i = exp(-sum_{j<i} sigma_j delta_j), rgb = sum w_i c_i + (1 - sum w_i) background.
// `rgb` is rays x samples x 3, `sigma` rays x samples.
RenderOutput composite(diff::Var rgb, diff::Var sigma, const SampleSet& samples,
                       const std::optional<scene::Rgb>& background);

struct ModelConfig {
  field::FieldConfig field;
  field::EncodingConfig encoding;
  SamplingConfig sampling;
};

// Radiance field weights: one network, or coarse + fine networks for hierarchical sampling.
struct ModelVars {
  field::FieldVars coarse;
  std::optional<field::FieldVars> fine;
};

struct Bounds {
  double near = 2.0;
  double far = 6.0;
  scene::Rgb background{1.0f, 1.0f, 1.0f};
};

struct RayRender {
  RenderOutput output;                 // final pass (fine when hierarchical)
  std::optional<RenderOutput> coarse;  // coarse pass when hierarchical
};

// Stratified samples -> field -> (hierarchical samples -> field) -> composite, processed in chunks
// of `chunk_rays` with the chunk-k random stream derived from (seed, k). Everything is recorded on
// the tape owning `model`'s variables.
RayRender render_rays(diff::Tape& tape, const ModelVars& model, const ModelConfig& config, const scene::RayBundle& rays,
                      const Bounds& bounds, std::uint64_t seed);

struct RenderedValues {
  diff::Tensor rgb;    // rays x 3
  diff::Tensor acc;    // rays
  diff::Tensor depth;  // rays
};

// Inference-only rendering; memory is bounded by the chunk size.
RenderedValues render_values(const field::FieldParams& coarse, const field::FieldParams* fine, const ModelConfig& config,
                             const scene::RayBundle& rays, const Bounds& bounds, std::uint64_t seed);

// Differentiable image (ceil(H/stride) x ceil(W/stride) x 3) seen from `pose`.
diff::Var render_image(diff::Tape& tape, const ModelVars& model, const ModelConfig& config,
                       const scene::CameraIntrinsics& intrinsics, const scene::Pose& pose, int stride,
                       const Bounds& bounds, std::uint64_t seed);

// Inference-only image.
diff::Tensor render_image_values(const field::FieldParams& coarse, const field::FieldParams* fine,
                                 const ModelConfig& config, const scene::CameraIntrinsics& intrinsics,
                                 const scene::Pose& pose, int stride, const Bounds& bounds, std::uint64_t seed);

}  // namespace dietfield::render
