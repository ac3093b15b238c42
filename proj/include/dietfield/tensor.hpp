#pragma once

#include <cstdint>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dietfield::diff {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float32 array. Storage is shared between copies and copied on first write,
// so passing tensors by value is cheap and a tensor observed through a const reference never
// changes underneath the observer.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }
  static Tensor from(std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(data_->size()); }
  bool empty() const { return data_->empty(); }

  std::span<const float> values() const { return {data_->data(), data_->size()}; }
  const float* data() const { return data_->data(); }
  // Detaches from shared storage before returning.
  std::span<float> mutable_values();
  float* mutable_data() { return mutable_values().data(); }

  float operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  float item() const;

  // Same storage, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  // Bitwise equality of shape and values.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<float>> data_;
};

// Name -> tensor, iterated in name order.
using NamedTensors = std::map<std::string, Tensor>;

// Throws NonFiniteError naming `what` if any element is NaN or infinite.
void assert_finite(const Tensor& t, const std::string& what);

}  // namespace dietfield::diff
