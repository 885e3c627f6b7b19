#include "curvlab/cost.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <limits>

#include "curvlab/rng.hpp"

namespace curvlab {

std::string_view to_string(CostKind kind) {
  return kind == CostKind::kSquare ? "square" : "cross-entropy";
}

CostKind parse_cost_kind(std::string_view name) {
  if (name == "square") return CostKind::kSquare;
  if (name == "cross-entropy") return CostKind::kCrossEntropy;
  throw ConfigError("unknown cost kind '" + std::string(name) + "'");
}

CostSpec CostSpec::cross_entropy(double label_smoothing, bool subtract_label_entropy) {
  CostSpec c;
  c.kind = CostKind::kCrossEntropy;
  c.label_smoothing = label_smoothing;
  c.subtract_label_entropy = subtract_label_entropy;
  return c;
}

TargetSet make_class_targets(const std::vector<std::size_t>& labels, std::size_t classes,
                             double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("label smoothing outside [0,1]");
  if (classes == 0) throw std::invalid_argument("need at least one class");
  const double off = alpha / static_cast<double>(classes);
  Tensor y(Shape{classes, labels.size()});
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] >= classes) throw std::invalid_argument("label out of range");
    for (std::size_t k = 0; k < classes; ++k) y(k, j) = off;
    y(labels[j], j) = (1.0 - alpha) + off;
  }
  return {std::move(y), alpha > 0.0};
}

double mean_label_entropy(const Tensor& y) {
  double total = 0.0;
  for (std::size_t j = 0; j < y.cols(); ++j) {
    for (std::size_t k = 0; k < y.rows(); ++k) {
      const double q = y(k, j);
      if (q > 0.0) total -= q * std::log(q);
    }
  }
  return total / static_cast<double>(y.cols());
}

double cost_value(const CostSpec& cost, const Tensor& z, const Tensor& y) {
  ad::Graph<double> g;
  return cost_program(cost, g.constant(z), y).value()[0];
}

double loss(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x, const Tensor& y) {
  ad::Graph<double> g;
  return loss_program(net, cost, g.constant(net.params()), x, y).value()[0];
}

LinearOperator cost_hessian_factor(const CostSpec& cost, const Tensor& z, const Tensor& y) {
  if (z.shape() != y.shape()) throw ShapeError("cost_hessian_factor: shape mismatch");
  require_finite(z, "cost_hessian_factor input");
  const std::size_t d = z.rows();
  const std::size_t n = z.cols();
  const std::size_t dim = d * n;

  if (cost.kind == CostKind::kSquare) {
    const double c = std::sqrt(2.0 / static_cast<double>(n));
    return make_symmetric_operator(dim, [c](const Vector& v) -> Vector { return c * v; });
  }

  // Per column: N^-1/2 (sum_k y_k)^1/2 (diag p - p p^T)^1/2.
  const Tensor p = softmax(z);
  std::vector<Matrix> roots(n);
  for (std::size_t j = 0; j < n; ++j) {
    Vector pj(static_cast<Eigen::Index>(d));
    double mass = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      pj[static_cast<Eigen::Index>(k)] = p(k, j);
      mass += y(k, j);
    }
    Matrix h = Matrix(pj.asDiagonal()) - pj * pj.transpose();
    h *= mass / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
    Vector lam = eig.eigenvalues();
    for (auto& l : lam) {
      if (l < -1e-10) throw NonFiniteError("cost Hessian is not positive semidefinite");
      l = std::sqrt(std::max(l, 0.0));
    }
    roots[j] = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  }
  return make_symmetric_operator(dim, [roots = std::move(roots), d, n](const Vector& v) {
    Vector out(v.size());
    Vector col(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < d; ++k) col[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(k * n + j)];
      const Vector r = roots[j] * col;
      for (std::size_t k = 0; k < d; ++k) out[static_cast<Eigen::Index>(k * n + j)] = r[static_cast<Eigen::Index>(k)];
    }
    return out;
  });
}

double kl_quadratic_ratio(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("kl_quadratic_ratio: size mismatch");
  double kl = 0.0;
  double dist2 = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    dist2 += (p[k] - q[k]) * (p[k] - q[k]);
    if (q[k] > 0.0) {
      if (p[k] <= 0.0) return std::numeric_limits<double>::infinity();
      kl += q[k] * std::log(q[k] / p[k]);
    }
  }
  if (dist2 == 0.0) throw std::invalid_argument("kl_quadratic_ratio: identical distributions");
  return kl / dist2;
}

namespace {

// Random point of the simplex: normalised powers of Exp(1) variates. Power 1
// is the uniform (flat Dirichlet) law; larger powers push mass toward faces.
std::vector<double> simplex_point(Rng& rng, std::size_t dim, double power) {
  std::vector<double> v(dim);
  double total = 0.0;
  for (auto& x : v) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    x = std::pow(-std::log(u), power);
    total += x;
  }
  for (auto& x : v) x /= total;
  return v;
}

}  // namespace

double quadratic_lower_bound_check(const CostSpec& cost, std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("trials must be >= 1");
  Rng rng(seed);
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t dim = 2 + uniform_index(rng, 9);
    if (cost.kind == CostKind::kSquare) {
      Tensor z1(Shape{dim, 1}), z2(Shape{dim, 1});
      for (std::size_t k = 0; k < dim; ++k) {
        z1[k] = normal(rng);
        z2[k] = normal(rng);
      }
      const Tensor diff = z1 - z2;
      const double d2 = dot(diff, diff);
      if (d2 == 0.0) continue;
      worst = std::min(worst, cost_value(cost, z1, z2) / d2);
      continue;
    }
    const double power = (t % 2 == 0) ? 1.0 : 5.0;
    const auto p = simplex_point(rng, dim, power);
    const auto q = simplex_point(rng, dim, power);
    if (p == q) continue;
    worst = std::min(worst, kl_quadratic_ratio(p, q));
  }
  return worst;
}

}  // namespace curvlab
