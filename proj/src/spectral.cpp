#include "curvlab/spectral.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <memory>

#include "curvlab/rng.hpp"

namespace curvlab {

namespace {

Vector random_unit(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(static_cast<Eigen::Index>(dim));
  for (auto& x : v) x = normal(rng);
  return v / v.norm();
}

double relative_change(double now, double before) {
  const double scale = std::max(std::abs(now), std::abs(before));
  return scale == 0.0 ? 0.0 : std::abs(now - before) / scale;
}

void require_symmetric(const LinearOperator& op) {
  if (!op.symmetric || op.dim_in != op.dim_out) {
    throw std::invalid_argument("power iteration needs a symmetric operator");
  }
  if (op.dim_in == 0) throw std::invalid_argument("power iteration needs dimension >= 1");
}

}  // namespace

SpectralResult power_iteration_magnitude(const LinearOperator& op, const PowerOptions& opts) {
  require_symmetric(op);
  Vector v = random_unit(op.dim_in, opts.seed);
  SpectralResult r;
  double prev = 0.0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const Vector w = op(v);
    const double norm = w.norm();
    r.iterations = it;
    if (norm == 0.0) {
      r.value = 0.0;
      r.residual = 0.0;
      r.converged = true;
      return r;
    }
    r.value = norm;
    r.residual = it == 1 ? 1.0 : relative_change(norm, prev);
    prev = norm;
    if (it > 1 && r.residual <= opts.tol) {
      r.converged = true;
      return r;
    }
    v = w / norm;
  }
  return r;
}

SpectralResult power_iteration(const LinearOperator& op, const PowerOptions& opts) {
  require_symmetric(op);
  const SpectralResult magnitude = power_iteration_magnitude(op, opts);
  if (magnitude.value == 0.0) return magnitude;

  const double mu = magnitude.value;
  Vector v = random_unit(op.dim_in, derive_seed(opts.seed, 1));
  SpectralResult r;
  r.iterations = magnitude.iterations;
  double prev = 0.0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const Vector w = op(v) + mu * v;
    const double rayleigh = v.dot(w);
    ++r.iterations;
    r.value = rayleigh - mu;
    r.residual = it == 1 ? 1.0 : relative_change(rayleigh, prev);
    prev = rayleigh;
    if (it > 1 && r.residual <= opts.tol) {
      r.converged = magnitude.converged;
      return r;
    }
    const double norm = w.norm();
    if (norm == 0.0) {
      // Every eigenvalue equals -mu.
      r.converged = magnitude.converged;
      r.residual = 0.0;
      return r;
    }
    v = w / norm;
  }
  return r;
}

SpectralResult singular_norm(const LinearOperator& op, const PowerOptions& opts) {
  SpectralResult r = power_iteration_magnitude(gram(op), opts);
  r.value = std::sqrt(std::max(r.value, 0.0));
  return r;
}

// ---- operators on the loss ----------------------------------------------------

LinearOperator loss_hessian(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                            const Tensor& y) {
  auto owned = std::make_shared<const LayeredNetwork>(net);
  auto program = [owned, cost, x, y](auto& g, auto th) {
    (void)g;
    return loss_program(*owned, cost, th, x, y);
  };
  return hessian_operator(program, net.params());
}

LinearOperator parameter_jacobian(const LayeredNetwork& net, const Tensor& x) {
  auto owned = std::make_shared<const LayeredNetwork>(net);
  const Tensor theta = net.params();
  auto program = [owned, x](auto& g, auto th) {
    return forward_program(*owned, th, g.constant(x));
  };
  const Shape p_shape = theta.shape();
  const Shape out_shape = forward_batch(net, x).shape();
  return make_operator(
      theta.size(), shape_size(out_shape),
      [=](const Vector& v) { return to_vector(ad::jvp(program, theta, to_tensor(v, p_shape))); },
      [=](const Vector& u) { return to_vector(ad::vjp(program, theta, to_tensor(u, out_shape))); });
}

LinearOperator gauss_newton(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                            const Tensor& y) {
  const LinearOperator j = parameter_jacobian(net, x);
  const LinearOperator c = cost_hessian_factor(cost, forward_batch(net, x), y);
  return make_symmetric_operator(j.dim_in, [j, c](const Vector& v) {
    return j.adjoint(c(c(j(v))));
  });
}

LinearOperator gauss_newton_conjugate(const LayeredNetwork& net, const CostSpec& cost,
                                      const Tensor& x, const Tensor& y) {
  const LinearOperator j = parameter_jacobian(net, x);
  const LinearOperator c = cost_hessian_factor(cost, forward_batch(net, x), y);
  return make_symmetric_operator(j.dim_out, [j, c](const Vector& u) {
    return c(j(j.adjoint(c(u))));
  });
}

LinearOperator residual_term(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                             const Tensor& y) {
  auto gamma = [&cost, &y](auto& g, auto z) {
    (void)g;
    return cost_program(cost, z, y);
  };
  const Tensor dgamma = ad::grad(gamma, forward_batch(net, x));
  auto owned = std::make_shared<const LayeredNetwork>(net);
  auto program = [owned, x, dgamma](auto& g, auto th) {
    return ad::sum(g.constant(dgamma) * forward_program(*owned, th, g.constant(x)));
  };
  return hessian_operator(program, net.params());
}

SpectralResult sharpness(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                         const Tensor& y, const PowerOptions& opts) {
  return power_iteration(loss_hessian(net, cost, x, y), opts);
}

SpectralResult gauss_newton_norm(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                                 const Tensor& y, GaussNewtonMode mode, const PowerOptions& opts) {
  // Both operators are positive semidefinite, so magnitude and algebraic
  // maxima coincide.
  if (mode == GaussNewtonMode::kPrimal) {
    return power_iteration_magnitude(gauss_newton(net, cost, x, y), opts);
  }
  return power_iteration_magnitude(gauss_newton_conjugate(net, cost, x, y), opts);
}

SpectralResult residual_term_norm(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                                  const Tensor& y, const PowerOptions& opts) {
  return power_iteration_magnitude(residual_term(net, cost, x, y), opts);
}

// ---- input-output Jacobians -----------------------------------------------------

namespace {

auto io_program(std::shared_ptr<const LayeredNetwork> net, bool softmaxed) {
  return [net, softmaxed](auto& g, auto a) {
    auto out = forward_program(*net, g.constant(net->params()), a);
    if (softmaxed) out = ad::softmax(out);
    return out;
  };
}

}  // namespace

JacobianNorms jacobian_norms(const LayeredNetwork& net, const Tensor& x, bool softmaxed,
                             const PowerOptions& opts) {
  if (net.has_train_bn()) {
    throw std::invalid_argument("jacobian_norms: train-mode batch norm couples samples");
  }
  if (x.rank() != 2) throw ShapeError("jacobian_norms expects a d x N matrix");
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();
  const auto program = io_program(std::make_shared<const LayeredNetwork>(net), softmaxed);

  Rng rng(opts.seed);
  Tensor v(x.shape());
  for (auto& e : v.storage()) e = normal(rng);
  auto normalise_columns = [d, n](Tensor& t, std::vector<double>& norms) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += t(i, j) * t(i, j);
      norms[j] = std::sqrt(s);
      if (norms[j] > 0.0) {
        for (std::size_t i = 0; i < d; ++i) t(i, j) /= norms[j];
      }
    }
  };
  std::vector<double> scratch(n);
  normalise_columns(v, scratch);

  std::vector<double> sigma2(n, 0.0);
  std::vector<bool> done(n, false);
  std::size_t remaining = n;
  for (int it = 1; it <= opts.max_iter && remaining > 0; ++it) {
    const Tensor w = ad::jvp(program, x, v);
    Tensor z = ad::vjp(program, x, w);
    for (std::size_t j = 0; j < n; ++j) {
      if (done[j]) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < w.rows(); ++i) s += w(i, j) * w(i, j);
      const double change = relative_change(s, sigma2[j]);
      sigma2[j] = s;
      if (s == 0.0 || (it > 1 && change <= opts.tol)) {
        done[j] = true;
        --remaining;
      }
    }
    normalise_columns(z, scratch);
    for (std::size_t j = 0; j < n; ++j) {
      if (done[j]) continue;
      for (std::size_t i = 0; i < d; ++i) v(i, j) = z(i, j);
    }
  }

  JacobianNorms out;
  out.norms.resize(n);
  out.converged = remaining == 0;
  for (std::size_t j = 0; j < n; ++j) {
    out.norms[j] = std::sqrt(sigma2[j]);
    if (j == 0 || out.norms[j] > out.max) {
      out.max = out.norms[j];
      out.argmax = j;
    }
  }
  return out;
}

std::vector<double> jacobian_norms_dense(const LayeredNetwork& net, const Tensor& x,
                                         bool softmaxed) {
  if (net.has_train_bn()) {
    throw std::invalid_argument("jacobian_norms_dense: train-mode batch norm couples samples");
  }
  if (x.rank() != 2) throw ShapeError("jacobian_norms_dense expects a d x N matrix");
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();
  const auto program = io_program(std::make_shared<const LayeredNetwork>(net), softmaxed);
  std::vector<Tensor> columns;
  columns.reserve(d);
  for (std::size_t i = 0; i < d; ++i) {
    Tensor e(x.shape());
    for (std::size_t j = 0; j < n; ++j) e(i, j) = 1.0;
    columns.push_back(ad::jvp(program, x, e));
  }
  const std::size_t m = columns.front().rows();
  std::vector<double> norms(n);
  Matrix jac(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < m; ++k) {
        jac(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = columns[i](k, j);
      }
    }
    norms[j] = Eigen::JacobiSVD<Matrix>(jac).singularValues()(0);
  }
  return norms;
}

Matrix dense_jacobian(const LayeredNetwork& net, const Tensor& x, bool softmaxed) {
  const Tensor input = x.reshaped(Shape{x.size()});
  const auto program = io_program(std::make_shared<const LayeredNetwork>(net), softmaxed);
  const std::size_t d_in = input.size();
  const std::size_t d_out = net.out_dim();
  Matrix jac(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in));
  if (d_out <= d_in) {
    Tensor e(Shape{d_out});
    for (std::size_t k = 0; k < d_out; ++k) {
      e[k] = 1.0;
      const Tensor row = ad::vjp(program, input, e);
      for (std::size_t i = 0; i < d_in; ++i) jac(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = row[i];
      e[k] = 0.0;
    }
  } else {
    Tensor e(Shape{d_in});
    for (std::size_t i = 0; i < d_in; ++i) {
      e[i] = 1.0;
      const Tensor col = ad::jvp(program, input, e);
      for (std::size_t k = 0; k < d_out; ++k) jac(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = col[k];
      e[i] = 0.0;
    }
  }
  return jac;
}

namespace {

double pair_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("sample pair has mismatched sizes");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  const double d = std::sqrt(s);
  if (d == 0.0) throw std::invalid_argument("sample pair is coincident");
  return d;
}

}  // namespace

double empirical_lipschitz(const VectorFunction& f, const SamplePairs& pairs) {
  double best = 0.0;
  for (const auto& [a, b] : pairs) {
    const double dx = pair_distance(a, b);
    const Tensor fa = f(a);
    const Tensor fb = f(b);
    best = std::max(best, norm2(fa - fb) / dx);
  }
  return best;
}

double empirical_lipschitz(const LayeredNetwork& net, const SamplePairs& pairs, bool softmaxed) {
  return empirical_lipschitz(
      [&net, softmaxed](const Tensor& x) { return forward_single(net, x, softmaxed); }, pairs);
}

double jacobian_lipschitz_estimate(const JacobianFunction& jac, const SamplePairs& pairs) {
  double best = 0.0;
  for (const auto& [a, b] : pairs) {
    const double dx = pair_distance(a, b);
    const Matrix diff = jac(a) - jac(b);
    const double norm =
        diff.size() == 0 ? 0.0 : Eigen::JacobiSVD<Matrix>(diff).singularValues()(0);
    best = std::max(best, norm / dx);
  }
  return best;
}

double jacobian_lipschitz_estimate(const LayeredNetwork& net, const SamplePairs& pairs,
                                   bool softmaxed) {
  return jacobian_lipschitz_estimate(
      [&net, softmaxed](const Tensor& x) { return dense_jacobian(net, x, softmaxed); }, pairs);
}

}  // namespace curvlab
