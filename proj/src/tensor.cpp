#include "curvlab/tensor.hpp"

#include <cmath>

namespace curvlab {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const std::string& context) {
  if (!all_finite(t)) throw NonFiniteError("non-finite value in " + context);
}

Tensor column(const Tensor& m, std::size_t j) {
  if (j >= m.cols()) throw ShapeError("column index out of range");
  Tensor out(Shape{m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, j);
  return out;
}

Tensor columns(const Tensor& m, std::size_t first, std::size_t count) {
  if (first + count > m.cols()) throw ShapeError("column range out of range");
  Tensor out(Shape{m.rows(), count});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = m(i, first + j);
  }
  return out;
}

Tensor select_columns(const Tensor& m, std::span<const std::size_t> indices) {
  Tensor out(Shape{m.rows(), indices.size()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= m.cols()) throw ShapeError("column index out of range");
    for (std::size_t i = 0; i < m.rows(); ++i) out(i, k) = m(i, indices[k]);
  }
  return out;
}

Tensor from_columns(std::span<const Tensor> cols) {
  if (cols.empty()) throw ShapeError("from_columns needs at least one column");
  const std::size_t d = cols.front().size();
  Tensor out(Shape{d, cols.size()});
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j].size() != d) throw ShapeError("column lengths differ");
    for (std::size_t i = 0; i < d; ++i) out(i, j) = cols[j][i];
  }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

Tensor operator+(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  Tensor out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b[k];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
  Tensor out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b[k];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.storage()) v *= s;
  return out;
}

}  // namespace curvlab
