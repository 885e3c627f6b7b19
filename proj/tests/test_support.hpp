#pragma once

// Independent numerical oracles shared by the unit tests and the acceptance
// runner. Nothing here uses the tape: derivatives come from central finite
// differences of plain function evaluations.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>

#include "curvlab/linear_operator.hpp"
#include "curvlab/rng.hpp"
#include "curvlab/tensor.hpp"

namespace curvlab::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = scale * normal(rng);
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// |a - b|_inf / max(|a|_inf, |b|_inf, floor)
inline double rel_err(const Tensor& a, const Tensor& b, double floor = 1e-12) {
  double diff = 0.0, scale = floor;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max({scale, std::abs(a[k]), std::abs(b[k])});
  }
  return diff / scale;
}

inline double rel_err(const Matrix& a, const Matrix& b, double floor = 1e-12) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

using ScalarFn = std::function<double(const Tensor&)>;
using TensorFn = std::function<Tensor(const Tensor&)>;

inline Tensor fd_gradient(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor xp = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    xp[k] = x[k] + h;
    const double up = f(xp);
    xp[k] = x[k] - h;
    const double down = f(xp);
    xp[k] = x[k];
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

// Directional derivative (f(x + h v) - f(x - h v)) / 2h.
inline Tensor fd_directional(const TensorFn& f, const Tensor& x, const Tensor& v, double h = 1e-5) {
  const Tensor up = f(x + h * v);
  const Tensor down = f(x - h * v);
  return (1.0 / (2.0 * h)) * (up - down);
}

// Dense Jacobian (rows: flattened outputs, cols: flattened inputs).
inline Matrix fd_jacobian(const TensorFn& f, const Tensor& x, double h = 1e-5) {
  const std::size_t m = f(x).size();
  Matrix j(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(x.size()));
  Tensor e(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) {
    e[k] = 1.0;
    const Tensor col = fd_directional(f, x, e, h);
    for (std::size_t i = 0; i < m; ++i) j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = col[i];
    e[k] = 0.0;
  }
  return j;
}

// Symmetrised Hessian from central differences of an analytic-free
// gradient: second differences of f itself.
inline Matrix fd_hessian(const ScalarFn& f, const Tensor& x, double h = 1e-4) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Matrix hess(n, n);
  Tensor xp = x;
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const auto ui = static_cast<std::size_t>(i);
      const auto uj = static_cast<std::size_t>(j);
      double value;
      if (i == j) {
        xp[ui] = x[ui] + h;
        const double up = f(xp);
        xp[ui] = x[ui] - h;
        const double down = f(xp);
        xp[ui] = x[ui];
        value = (up - 2.0 * f0 + down) / (h * h);
      } else {
        auto eval = [&](double si, double sj) {
          xp[ui] = x[ui] + si * h;
          xp[uj] = x[uj] + sj * h;
          const double v = f(xp);
          xp[ui] = x[ui];
          xp[uj] = x[uj];
          return v;
        };
        value = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * h * h);
      }
      hess(i, j) = value;
      hess(j, i) = value;
    }
  }
  return hess;
}

inline double top_eigenvalue(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sym + sym.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff();
}

}  // namespace curvlab::testing
