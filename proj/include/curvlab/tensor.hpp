#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "curvlab/errors.hpp"

namespace curvlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape);

// Dense row-major array. Rank 0 is a scalar, rank 1 a vector (treated as a
// column where matrix semantics are needed), rank 2 a matrix.
template <class T>
class BasicTensor {
 public:
  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_size(shape_), T{}) {}

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, {value}); }

  static BasicTensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor(Shape{n}, std::move(values));
  }

  // Row-by-row initializer: matrix({{1, 2}, {3, 4}}).
  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix initializer");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor(Shape{r, c}, std::move(data));
  }

  static BasicTensor zeros(std::size_t rows, std::size_t cols) {
    return BasicTensor(Shape{rows, cols});
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Matrix view: rank 0 -> 1x1, rank 1 -> n x 1.
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const {
    return shape_.size() < 2 ? 1 : size() / shape_[0];
  }

  T& operator[](std::size_t k) { return data_[k]; }
  const T& operator[](std::size_t k) const { return data_[k]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols() + j];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;

bool all_finite(const Tensor& t);
void require_finite(const Tensor& t, const std::string& context);

// Column j of a rank-2 tensor as a rank-1 tensor.
Tensor column(const Tensor& m, std::size_t j);
// Columns [first, first + count).
Tensor columns(const Tensor& m, std::size_t first, std::size_t count);
// Columns at the given indices, in order.
Tensor select_columns(const Tensor& m, std::span<const std::size_t> indices);
Tensor from_columns(std::span<const Tensor> cols);

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

}  // namespace curvlab
