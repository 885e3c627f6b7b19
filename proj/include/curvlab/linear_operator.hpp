#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <functional>

#include "curvlab/tensor.hpp"

namespace curvlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Matrix-free operator. Symmetric operators leave apply_adjoint empty.
struct LinearOperator {
  using Action = std::function<Vector(const Vector&)>;

  std::size_t dim_in = 0;
  std::size_t dim_out = 0;
  Action apply;
  Action apply_adjoint;
  bool symmetric = false;

  Vector operator()(const Vector& v) const;
  Vector adjoint(const Vector& u) const;

  // Column-by-column materialisation; for tests and small oracles.
  Matrix to_dense() const;
};

LinearOperator make_symmetric_operator(std::size_t dim, LinearOperator::Action apply);
LinearOperator make_operator(std::size_t dim_in, std::size_t dim_out, LinearOperator::Action apply,
                             LinearOperator::Action apply_adjoint);
LinearOperator dense_operator(const Matrix& m);

// v -> A^T A v
LinearOperator gram(const LinearOperator& a);
// v -> A B v
LinearOperator compose(const LinearOperator& a, const LinearOperator& b);

// max over random probes of |<u, Av> - <A^T u, v>| / (|<u, Av>| + |<A^T u, v>|).
double adjoint_mismatch(const LinearOperator& op, std::uint64_t seed, int probes = 5);

Vector to_vector(const Tensor& t);
Tensor to_tensor(const Vector& v, Shape shape);
// Rank-2 tensor <-> dense matrix.
Matrix to_matrix(const Tensor& t);
Tensor from_matrix(const Matrix& m);

}  // namespace curvlab
