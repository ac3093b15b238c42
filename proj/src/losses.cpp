#include "dietfield/losses.hpp"

#include <cmath>

#include "dietfield/error.hpp"

namespace dietfield::losses {

using diff::Shape;
using diff::Var;

Var mse_rays(Var pred, Var target) {
  if (pred.shape() != target.shape() || pred.value().rank() != 2 || pred.dim(1) != 3) {
    throw ShapeError("mse_rays: prediction " + diff::shape_string(pred.shape()) + " vs target " +
                     diff::shape_string(target.shape()) + " (expected matching N x 3)");
  }
  if (pred.dim(0) == 0) throw ValidationError("mse_rays: empty ray batch");
  return diff::sum(diff::square(pred - target)) * (1.0f / static_cast<float>(pred.dim(0)));
}

Var mse_full(Var image, Var target) {
  if (image.shape() != target.shape() || image.value().rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("mse_full: image " + diff::shape_string(image.shape()) + " vs target " +
                     diff::shape_string(target.shape()) + " (expected matching H x W x 3)");
  }
  const std::int64_t pixels = image.dim(0) * image.dim(1);
  return mse_rays(diff::reshape(image, {pixels, 3}), diff::reshape(target, {pixels, 3}));
}

namespace {

void check_pair(const char* op, Var a, Var b) {
  if (a.value().rank() != 1 || a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": embeddings " + diff::shape_string(a.shape()) + " and " +
                     diff::shape_string(b.shape()) + " differ");
  }
}

double norm(const diff::Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

}  // namespace

Var sc_l2(Var target, Var rendered, float lambda) {
  check_pair("sc_l2", target, rendered);
  return diff::sum(diff::square(target - rendered)) * (0.5f * lambda);
}

Var sc_cosine(Var target, Var rendered, float lambda) {
  check_pair("sc_cosine", target, rendered);
  if (norm(target.value()) == 0.0 || norm(rendered.value()) == 0.0) {
    throw ValidationError("sc_cosine: zero embedding vector");
  }
  Var cosine = diff::dot(diff::l2_normalize(target), diff::l2_normalize(rendered));
  return (1.0f - cosine) * lambda;
}

}  // namespace dietfield::losses
