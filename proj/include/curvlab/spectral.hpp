#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "curvlab/cost.hpp"
#include "curvlab/linear_operator.hpp"
#include "curvlab/network.hpp"
#include "curvlab/tensor.hpp"

namespace curvlab {

struct SpectralResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  // Last relative change of the tracked estimate.
  double residual = 0.0;
};

struct PowerOptions {
  double tol = 1e-6;
  int max_iter = 1000;
  std::uint64_t seed = 0;
};

// Largest algebraic eigenvalue of a symmetric operator. A magnitude run
// supplies the shift mu = |lambda|; the shifted operator op + mu I is then
// iterated and mu subtracted, so dominant negative eigenvalues are skipped.
SpectralResult power_iteration(const LinearOperator& op, const PowerOptions& opts = {});

// Largest |lambda| of a symmetric operator, tracked through |A v|.
SpectralResult power_iteration_magnitude(const LinearOperator& op, const PowerOptions& opts = {});

// sigma_max = sqrt(lambda_max(A^T A)).
SpectralResult singular_norm(const LinearOperator& op, const PowerOptions& opts = {});

// ---- operators on the loss ----------------------------------------------------

// v -> D^2 f(theta) v for a scalar program f.
template <class Program>
LinearOperator hessian_operator(Program program, const Tensor& theta) {
  return make_symmetric_operator(theta.size(), [program, theta](const Vector& v) {
    return to_vector(ad::hvp(program, theta, to_tensor(v, theta.shape())));
  });
}

// v -> D^2 l(theta) v
LinearOperator loss_hessian(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                            const Tensor& y);
// DF_X as an operator from parameters to row-major flattened d_L x N outputs.
LinearOperator parameter_jacobian(const LayeredNetwork& net, const Tensor& x);
// v -> DF_X^T D^2 gamma_Y DF_X v
LinearOperator gauss_newton(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                            const Tensor& y);
// u -> C DF_X DF_X^T C u in output space.
LinearOperator gauss_newton_conjugate(const LayeredNetwork& net, const CostSpec& cost,
                                      const Tensor& x, const Tensor& y);
// v -> D gamma_Y D^2 F_X v: the Hessian of theta -> <G, F_X(theta)> with
// G = D gamma_Y frozen at the current outputs.
LinearOperator residual_term(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                             const Tensor& y);

enum class GaussNewtonMode { kPrimal, kConjugate };

SpectralResult sharpness(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                         const Tensor& y, const PowerOptions& opts = {});
SpectralResult gauss_newton_norm(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                                 const Tensor& y, GaussNewtonMode mode,
                                 const PowerOptions& opts = {});
// Spectral norm (largest magnitude eigenvalue) of the residual term.
SpectralResult residual_term_norm(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                                  const Tensor& y, const PowerOptions& opts = {});

// ---- input-output Jacobians -----------------------------------------------------

struct JacobianNorms {
  std::vector<double> norms;
  std::size_t argmax = 0;
  double max = 0.0;
  bool converged = true;
};

// Per-column spectral norms of the (optionally softmaxed) model Jacobian.
// All columns are iterated together: the batch Jacobian is block diagonal,
// so one jvp and one vjp per step serve every sample.
JacobianNorms jacobian_norms(const LayeredNetwork& net, const Tensor& x, bool softmaxed,
                             const PowerOptions& opts = {});

// Exact per-column norms from d_0 batched jvps and a small SVD per column;
// meant for low input dimension.
std::vector<double> jacobian_norms_dense(const LayeredNetwork& net, const Tensor& x, bool softmaxed);

// Dense d_L x d_0 Jacobian at a single input.
Matrix dense_jacobian(const LayeredNetwork& net, const Tensor& x, bool softmaxed);

using SamplePairs = std::vector<std::pair<Tensor, Tensor>>;
using VectorFunction = std::function<Tensor(const Tensor&)>;
using JacobianFunction = std::function<Matrix(const Tensor&)>;

// max |f(x) - f(x')| / |x - x'|; a lower bound on the Lipschitz norm.
double empirical_lipschitz(const VectorFunction& f, const SamplePairs& pairs);
double empirical_lipschitz(const LayeredNetwork& net, const SamplePairs& pairs, bool softmaxed);

// max |Jf(x) - Jf(x')|_2 / |x - x'| from dense Jacobians.
double jacobian_lipschitz_estimate(const JacobianFunction& jac, const SamplePairs& pairs);
double jacobian_lipschitz_estimate(const LayeredNetwork& net, const SamplePairs& pairs,
                                   bool softmaxed);

}  // namespace curvlab
