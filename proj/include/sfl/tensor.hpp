#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sfl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major binary32 tensor. The leading dimension is the batch axis
// wherever a tensor carries samples.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor filled(Shape shape, float value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& vec() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  // Rows [begin, end) along the leading axis.
  Tensor rows(std::size_t begin, std::size_t end) const;
  // Elements per leading-axis row.
  std::size_t row_size() const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Throws NonFiniteError naming `what` if any value is NaN or Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace sfl
