#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "curvlab/autodiff.hpp"
#include "curvlab/linear_operator.hpp"
#include "curvlab/network.hpp"
#include "curvlab/tensor.hpp"

namespace curvlab {

enum class CostKind { kSquare, kCrossEntropy };

std::string_view to_string(CostKind kind);
CostKind parse_cost_kind(std::string_view name);

struct CostSpec {
  CostKind kind = CostKind::kSquare;
  double label_smoothing = 0.0;
  // Cross-entropy only: subtract the mean target entropy so the infimum is 0.
  bool subtract_label_entropy = false;

  // gamma with c(z1, z2) >= gamma |z1 - z2|^2; for cross-entropy this holds
  // on softmax outputs (Pinsker).
  double gamma_lower() const { return kind == CostKind::kSquare ? 1.0 : 0.5; }

  static CostSpec square() { return {}; }
  static CostSpec cross_entropy(double label_smoothing = 0.0, bool subtract_label_entropy = true);
};

struct TargetSet {
  Tensor y;
  bool smoothed = false;
};

// (1 - alpha) onehot + alpha / classes, one column per label.
TargetSet make_class_targets(const std::vector<std::size_t>& labels, std::size_t classes,
                             double alpha);

// Mean over columns of the Shannon entropy of each target column.
double mean_label_entropy(const Tensor& y);

// gamma_Y(Z) = N^-1 sum_i c(Z_i, Y_i), traced.
template <class S>
ad::Var<S> cost_program(const CostSpec& cost, ad::Var<S> z, const Tensor& y) {
  if (z.value().shape() != y.shape()) {
    throw ShapeError("cost: output " + shape_string(z.shape()) + " vs target " +
                     shape_string(y.shape()));
  }
  auto& g = *z.graph;
  const double inv_n = 1.0 / static_cast<double>(y.cols());
  if (cost.kind == CostKind::kSquare) {
    return ad::scale(ad::sum(ad::square(z - g.constant(y))), inv_n);
  }
  auto ce = ad::scale(ad::sum(g.constant(y) * ad::log_softmax(z)), -inv_n);
  if (cost.subtract_label_entropy) ce = ad::add_scalar(ce, -mean_label_entropy(y));
  return ce;
}

// l(theta) = gamma_Y(F_X(theta)), traced in theta.
template <class S>
ad::Var<S> loss_program(const LayeredNetwork& net, const CostSpec& cost, ad::Var<S> theta,
                        const Tensor& x, const Tensor& y) {
  auto& g = *theta.graph;
  return cost_program(cost, forward_program(net, theta, g.constant(x)), y);
}

double cost_value(const CostSpec& cost, const Tensor& z, const Tensor& y);
double loss(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x, const Tensor& y);

// C = (D^2 gamma_Y)^(1/2) at Z, acting on row-major flattened d_L x N matrices.
LinearOperator cost_hessian_factor(const CostSpec& cost, const Tensor& z, const Tensor& y);

// KL(q || p) / |p - q|^2 for distributions p (model) and q (target);
// +inf when q puts mass where p has none.
double kl_quadratic_ratio(const std::vector<double>& p, const std::vector<double>& q);

// Smallest sampled c(z1, z2) / |z1 - z2|^2. Cross-entropy pairs are softmax
// outputs with the label entropy subtracted (the KL divergence).
double quadratic_lower_bound_check(const CostSpec& cost, std::size_t trials, std::uint64_t seed);

}  // namespace curvlab
