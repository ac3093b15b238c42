#include "dietfield/render.hpp"

#include <algorithm>
#include <cmath>

#include "dietfield/error.hpp"

namespace dietfield::render {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {
constexpr float kWeightFloor = 1e-5f;
constexpr double kMinDelta = 1e-6;
}  // namespace

void SamplingConfig::validate() const {
  if (n_coarse < 2) throw ValidationError("sampling: n_coarse must be >= 2");
  if (n_fine < 0) throw ValidationError("sampling: n_fine must be >= 0");
  if (chunk_rays < 1) throw ValidationError("sampling: chunk_rays must be >= 1");
}

Tensor sample_deltas(const Tensor& t, double far) {
  const std::int64_t rays = t.dim(0), s = t.dim(1);
  Tensor d(t.shape());
  float* pd = d.mutable_data();
  const float* pt = t.data();
  for (std::int64_t r = 0; r < rays; ++r) {
    for (std::int64_t i = 0; i < s; ++i) {
      const double next = i + 1 < s ? static_cast<double>(pt[r * s + i + 1]) : far;
      pd[r * s + i] = static_cast<float>(std::max(next - static_cast<double>(pt[r * s + i]), kMinDelta));
    }
  }
  return d;
}

SampleSet stratified_samples(std::int64_t rays, double near, double far, int n_coarse, Rng& rng, bool perturb) {
  if (!(near < far)) throw ValidationError("stratified_samples: need near < far");
  if (n_coarse < 2) throw ValidationError("stratified_samples: need at least 2 samples");
  SampleSet s;
  s.edges.resize(static_cast<std::size_t>(n_coarse) + 1);
  const double width = (far - near) / n_coarse;
  for (int i = 0; i <= n_coarse; ++i) s.edges[static_cast<std::size_t>(i)] = near + i * width;
  s.t = Tensor(Shape{rays, n_coarse});
  float* pt = s.t.mutable_data();
  for (std::int64_t r = 0; r < rays; ++r) {
    for (int i = 0; i < n_coarse; ++i) {
      const double u = perturb ? rng.uniform_double() : 0.5;
      pt[r * n_coarse + i] = static_cast<float>(near + (i + u) * width);
    }
  }
  s.deltas = sample_deltas(s.t, far);
  return s;
}

SampleSet hierarchical_samples(const SampleSet& coarse, const Tensor& coarse_weights, int n_fine, double far, Rng& rng,
                               bool perturb) {
  const std::int64_t rays = coarse.rays(), bins = coarse.samples();
  if (coarse.edges.size() != static_cast<std::size_t>(bins) + 1) {
    throw ValidationError("hierarchical_samples: coarse set must carry stratified bin edges");
  }
  if (coarse_weights.shape() != coarse.t.shape()) {
    throw ShapeError("hierarchical_samples: weights " + diff::shape_string(coarse_weights.shape()) +
                     " do not match samples " + diff::shape_string(coarse.t.shape()));
  }
  if (n_fine < 1) throw ValidationError("hierarchical_samples: n_fine must be >= 1");
  const std::int64_t total = bins + n_fine;
  SampleSet out;
  out.t = Tensor(Shape{rays, total});
  float* po = out.t.mutable_data();
  std::vector<double> cdf(static_cast<std::size_t>(bins) + 1);
  std::vector<float> merged(static_cast<std::size_t>(total));
  for (std::int64_t r = 0; r < rays; ++r) {
    cdf[0] = 0.0;
    for (std::int64_t b = 0; b < bins; ++b) {
      const double w = std::max(0.0f, coarse_weights[r * bins + b]) + kWeightFloor;
      cdf[static_cast<std::size_t>(b) + 1] = cdf[static_cast<std::size_t>(b)] + w;
    }
    const double norm = cdf.back();
    for (double& c : cdf) c /= norm;
    cdf.back() = 1.0;
    for (std::int64_t b = 0; b < bins; ++b) merged[static_cast<std::size_t>(b)] = coarse.t[r * bins + b];
    for (int k = 0; k < n_fine; ++k) {
      const double u = perturb ? rng.uniform_double() : (k + 0.5) / n_fine;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      std::int64_t b = std::clamp<std::int64_t>(static_cast<std::int64_t>(it - cdf.begin()) - 1, 0, bins - 1);
      const double lo = cdf[static_cast<std::size_t>(b)], hi = cdf[static_cast<std::size_t>(b) + 1];
      const double frac = hi > lo ? (u - lo) / (hi - lo) : 0.5;
      const double e0 = coarse.edges[static_cast<std::size_t>(b)], e1 = coarse.edges[static_cast<std::size_t>(b) + 1];
      merged[static_cast<std::size_t>(bins + k)] = static_cast<float>(e0 + frac * (e1 - e0));
    }
    std::sort(merged.begin(), merged.end());
    for (std::size_t i = 1; i < merged.size(); ++i) {
      if (!(merged[i] > merged[i - 1])) merged[i] = std::nextafter(merged[i - 1], INFINITY);
    }
    std::copy(merged.begin(), merged.end(), po + r * total);
  }
  out.deltas = sample_deltas(out.t, far);
  return out;
}

RenderOutput composite(Var rgb, Var sigma, const SampleSet& samples, const std::optional<scene::Rgb>& background) {
  Tape& tape = sigma.tape();
  const std::int64_t rays = samples.rays(), n = samples.samples();
  if (sigma.shape() != Shape{rays, n} || rgb.shape() != Shape{rays, n, 3}) {
    throw ShapeError("composite: rgb " + diff::shape_string(rgb.shape()) + " / sigma " + diff::shape_string(sigma.shape()) +
                     " do not match samples " + diff::shape_string(samples.t.shape()));
  }
  Var deltas = tape.constant(samples.deltas);
  Var optical = sigma * deltas;
  Var transmittance = diff::exp(-diff::cumsum(optical, 1, /*exclusive=*/true));
  Var alpha = 1.0f - diff::exp(-optical);
  RenderOutput out;
  out.weights = transmittance * alpha;
  out.acc = diff::sum(out.weights, 1);
  Var color = diff::sum(diff::reshape(out.weights, {rays, n, 1}) * rgb, 1);
  if (background) {
    Var bg = tape.constant(Tensor(Shape{1, 3}, {(*background)[0], (*background)[1], (*background)[2]}));
    color = color + diff::reshape(1.0f - out.acc, {rays, 1}) * bg;
  }
  out.rgb = color;
  Var t = tape.constant(samples.t);
  Tensor clamped(Shape{rays});
  for (std::int64_t r = 0; r < rays; ++r) clamped.mutable_values()[static_cast<std::size_t>(r)] = std::max(out.acc.value()[r], 1e-10f);
  // Depth normalization uses the acc value as a constant so the guard has no gradient kink.
  out.depth = diff::sum(out.weights * t, 1) / tape.constant(clamped);
  return out;
}

namespace {

RenderOutput eval_pass(Tape& tape, const field::FieldVars& net, const ModelConfig& config, const Tensor& origins,
                       const Tensor& dirs, const SampleSet& samples, const Bounds& bounds) {
  const std::int64_t rays = samples.rays(), n = samples.samples();
  Tensor pos(Shape{rays * n, 3});
  Tensor rep(Shape{rays * n, 3});
  float* pp = pos.mutable_data();
  float* pr = rep.mutable_data();
  for (std::int64_t r = 0; r < rays; ++r) {
    for (std::int64_t i = 0; i < n; ++i) {
      const float t = samples.t[r * n + i];
      for (int c = 0; c < 3; ++c) {
        const float d = dirs[r * 3 + c];
        pp[(r * n + i) * 3 + c] = origins[r * 3 + c] + t * d;
        pr[(r * n + i) * 3 + c] = d;
      }
    }
  }
  field::FieldOutput fo = field::field_eval(net, tape.constant(pos), tape.constant(rep), config.field, config.encoding);
  return composite(diff::reshape(fo.rgb, {rays, n, 3}), diff::reshape(fo.sigma, {rays, n}), samples, bounds.background);
}

Tensor rows(const Tensor& t, std::int64_t begin, std::int64_t end) {
  const std::int64_t cols = t.dim(1);
  std::vector<float> values(t.data() + begin * cols, t.data() + end * cols);
  return Tensor(Shape{end - begin, cols}, std::move(values));
}

RayRender render_chunk(Tape& tape, const ModelVars& model, const ModelConfig& config, const Tensor& origins,
                       const Tensor& dirs, const Bounds& bounds, Rng& rng) {
  const auto& s = config.sampling;
  SampleSet coarse = stratified_samples(origins.dim(0), bounds.near, bounds.far, s.n_coarse, rng, s.perturb);
  RenderOutput c = eval_pass(tape, model.coarse, config, origins, dirs, coarse, bounds);
  if (s.n_fine == 0) return {c, std::nullopt};
  SampleSet merged = hierarchical_samples(coarse, c.weights.value(), s.n_fine, bounds.far, rng, s.perturb);
  const field::FieldVars& fine = model.fine ? *model.fine : model.coarse;
  return {eval_pass(tape, fine, config, origins, dirs, merged, bounds), c};
}

RenderOutput join(const std::vector<RenderOutput>& parts) {
  if (parts.size() == 1) return parts[0];
  std::vector<Var> rgb, w, acc, depth;
  for (const auto& p : parts) {
    rgb.push_back(p.rgb);
    w.push_back(p.weights);
    acc.push_back(p.acc);
    depth.push_back(p.depth);
  }
  return {diff::concat(rgb, 0), diff::concat(w, 0), diff::concat(acc, 0), diff::concat(depth, 0)};
}

}  // namespace

RayRender render_rays(Tape& tape, const ModelVars& model, const ModelConfig& config, const scene::RayBundle& rays,
                      const Bounds& bounds, std::uint64_t seed) {
  config.sampling.validate();
  const std::int64_t n = rays.size();
  if (n == 0) throw ValidationError("render_rays: empty ray bundle");
  std::vector<RenderOutput> fine, coarse;
  const std::int64_t chunk = config.sampling.chunk_rays;
  for (std::int64_t begin = 0, k = 0; begin < n; begin += chunk, ++k) {
    const std::int64_t end = std::min(n, begin + chunk);
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(k));
    RayRender part = render_chunk(tape, model, config, rows(rays.origins, begin, end), rows(rays.directions, begin, end),
                                  bounds, rng);
    fine.push_back(part.output);
    if (part.coarse) coarse.push_back(*part.coarse);
  }
  RayRender out;
  out.output = join(fine);
  if (!coarse.empty()) out.coarse = join(coarse);
  return out;
}

RenderedValues render_values(const field::FieldParams& coarse, const field::FieldParams* fine, const ModelConfig& config,
                             const scene::RayBundle& rays, const Bounds& bounds, std::uint64_t seed) {
  config.sampling.validate();
  const std::int64_t n = rays.size();
  RenderedValues out{Tensor(Shape{n, 3}), Tensor(Shape{n}), Tensor(Shape{n})};
  float* prgb = out.rgb.mutable_data();
  float* pacc = out.acc.mutable_data();
  float* pdepth = out.depth.mutable_data();
  const std::int64_t chunk = config.sampling.chunk_rays;
  for (std::int64_t begin = 0, k = 0; begin < n; begin += chunk, ++k) {
    const std::int64_t end = std::min(n, begin + chunk);
    Tape tape;
    ModelVars vars{field::as_constants(tape, coarse), std::nullopt};
    if (fine) vars.fine = field::as_constants(tape, *fine);
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(k));
    RayRender part = render_chunk(tape, vars, config, rows(rays.origins, begin, end), rows(rays.directions, begin, end),
                                  bounds, rng);
    const Tensor& rgb = part.output.rgb.value();
    std::copy(rgb.data(), rgb.data() + rgb.size(), prgb + begin * 3);
    std::copy(part.output.acc.value().data(), part.output.acc.value().data() + (end - begin), pacc + begin);
    std::copy(part.output.depth.value().data(), part.output.depth.value().data() + (end - begin), pdepth + begin);
  }
  return out;
}

Var render_image(Tape& tape, const ModelVars& model, const ModelConfig& config, const scene::CameraIntrinsics& intrinsics,
                 const scene::Pose& pose, int stride, const Bounds& bounds, std::uint64_t seed) {
  const scene::RayBundle rays = scene::strided_rays(intrinsics, pose, stride);
  RayRender r = render_rays(tape, model, config, rays, bounds, seed);
  return diff::reshape(r.output.rgb, {rays.grid_height, rays.grid_width, 3});
}

Tensor render_image_values(const field::FieldParams& coarse, const field::FieldParams* fine, const ModelConfig& config,
                           const scene::CameraIntrinsics& intrinsics, const scene::Pose& pose, int stride,
                           const Bounds& bounds, std::uint64_t seed) {
  const scene::RayBundle rays = scene::strided_rays(intrinsics, pose, stride);
  RenderedValues v = render_values(coarse, fine, config, rays, bounds, seed);
  return v.rgb.reshaped(Shape{rays.grid_height, rays.grid_width, 3});
}

}  // namespace dietfield::render
