#include "dietfield/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "dietfield/error.hpp"

namespace dietfield::diff {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d < 0) throw ShapeError("Tensor: negative dimension in shape " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = std::make_shared<std::vector<float>>(static_cast<std::size_t>(shape_size(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
  check_shape(shape_);
  if (static_cast<std::int64_t>(values.size()) != shape_size(shape_)) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                     shape_string(shape_));
  }
  data_ = std::make_shared<std::vector<float>>(std::move(values));
}

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor(Shape{static_cast<std::int64_t>(values.size())}, std::vector<float>(values));
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("Tensor::dim: axis out of range for shape " + shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

std::span<float> Tensor::mutable_values() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<float>>(*data_);
  return {data_->data(), data_->size()};
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("Tensor::item: tensor of shape " + shape_string(shape_) + " is not a scalar");
  return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_size(shape) != size()) {
    throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::all_finite() const {
  for (float v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ && data_->size() == other.data_->size() &&
         std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(float)) == 0;
}

void assert_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NonFiniteError(what + ": non-finite value in tensor of shape " + shape_string(t.shape()));
}

}  // namespace dietfield::diff
