#include "curvlab/linear_operator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "curvlab/rng.hpp"

namespace curvlab {

Vector LinearOperator::operator()(const Vector& v) const {
  if (static_cast<std::size_t>(v.size()) != dim_in) throw ShapeError("operator: input dimension");
  return apply(v);
}

Vector LinearOperator::adjoint(const Vector& u) const {
  if (static_cast<std::size_t>(u.size()) != dim_out) throw ShapeError("operator: adjoint dimension");
  if (symmetric) return apply(u);
  if (!apply_adjoint) throw std::logic_error("operator has no adjoint action");
  return apply_adjoint(u);
}

Matrix LinearOperator::to_dense() const {
  Matrix m(static_cast<Eigen::Index>(dim_out), static_cast<Eigen::Index>(dim_in));
  Vector e = Vector::Zero(static_cast<Eigen::Index>(dim_in));
  for (Eigen::Index j = 0; j < e.size(); ++j) {
    e[j] = 1.0;
    m.col(j) = apply(e);
    e[j] = 0.0;
  }
  return m;
}

LinearOperator make_symmetric_operator(std::size_t dim, LinearOperator::Action apply) {
  LinearOperator op;
  op.dim_in = dim;
  op.dim_out = dim;
  op.apply = std::move(apply);
  op.symmetric = true;
  return op;
}

LinearOperator make_operator(std::size_t dim_in, std::size_t dim_out, LinearOperator::Action apply,
                             LinearOperator::Action apply_adjoint) {
  LinearOperator op;
  op.dim_in = dim_in;
  op.dim_out = dim_out;
  op.apply = std::move(apply);
  op.apply_adjoint = std::move(apply_adjoint);
  return op;
}

LinearOperator dense_operator(const Matrix& m) {
  const bool sym = m.rows() == m.cols() && m.isApprox(m.transpose(), 0.0);
  if (sym) {
    return make_symmetric_operator(static_cast<std::size_t>(m.rows()),
                                   [m](const Vector& v) -> Vector { return m * v; });
  }
  return make_operator(
      static_cast<std::size_t>(m.cols()), static_cast<std::size_t>(m.rows()),
      [m](const Vector& v) -> Vector { return m * v; },
      [m](const Vector& u) -> Vector { return m.transpose() * u; });
}

LinearOperator gram(const LinearOperator& a) {
  return make_symmetric_operator(a.dim_in, [a](const Vector& v) { return a.adjoint(a(v)); });
}

LinearOperator compose(const LinearOperator& a, const LinearOperator& b) {
  if (b.dim_out != a.dim_in) throw ShapeError("compose: dimension mismatch");
  return make_operator(
      b.dim_in, a.dim_out, [a, b](const Vector& v) { return a(b(v)); },
      [a, b](const Vector& u) { return b.adjoint(a.adjoint(u)); });
}

double adjoint_mismatch(const LinearOperator& op, std::uint64_t seed, int probes) {
  Rng rng(seed);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    Vector u(static_cast<Eigen::Index>(op.dim_out));
    Vector v(static_cast<Eigen::Index>(op.dim_in));
    for (auto& x : u) x = normal(rng);
    for (auto& x : v) x = normal(rng);
    const double lhs = u.dot(op(v));
    const double rhs = op.adjoint(u).dot(v);
    const double scale = std::abs(lhs) + std::abs(rhs);
    if (scale > 0.0) worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

Vector to_vector(const Tensor& t) {
  Vector v(static_cast<Eigen::Index>(t.size()));
  std::copy(t.data().begin(), t.data().end(), v.data());
  return v;
}

Tensor to_tensor(const Vector& v, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(v.data(), v.data() + v.size()));
}

Matrix to_matrix(const Tensor& t) {
  Matrix m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t(i, j);
    }
  }
  return m;
}

Tensor from_matrix(const Matrix& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      t(i, j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  return t;
}

}  // namespace curvlab
