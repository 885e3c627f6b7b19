#include "curvlab/bn_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "curvlab/csv.hpp"
#include "curvlab/parallel.hpp"
#include "curvlab/rng.hpp"
#include "curvlab/spectral.hpp"

namespace curvlab {

namespace {

void row_stats(const Tensor& x, std::size_t i, double& mean, double& var) {
  const std::size_t n = x.cols();
  mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += x(i, j);
  mean /= static_cast<double>(n);
  var = 0.0;
  for (std::size_t j = 0; j < n; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
  var /= static_cast<double>(n);
}

void validate(const BnBatchState& state, BnMode mode) {
  if (state.x.rank() != 2) throw ShapeError("batch norm state needs a d x N matrix");
  if (!(state.eps > 0.0)) throw std::invalid_argument("batch norm eps must be positive");
  if (state.mean.size() != state.x.rows() || state.var.size() != state.x.rows()) {
    throw ShapeError("batch norm statistics do not match the number of rows");
  }
  for (double v : state.var) {
    if (v < 0.0) throw std::invalid_argument("batch norm variance is negative");
  }
  if (mode == BnMode::kTrain && state.x.cols() < 2) {
    throw std::invalid_argument("train-mode batch norm needs N >= 2");
  }
}

}  // namespace

BnBatchState BnBatchState::from_batch(Tensor x, double eps) {
  BnBatchState s;
  s.mean.resize(x.rows());
  s.var.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) row_stats(x, i, s.mean[i], s.var[i]);
  s.x = std::move(x);
  s.eps = eps;
  return s;
}

Tensor bn_forward(const BnBatchState& state, BnMode mode) {
  validate(state, mode);
  const Tensor& x = state.x;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = state.mean[i];
    double var = state.var[i];
    if (mode == BnMode::kTrain) row_stats(x, i, mean, var);
    const double inv = 1.0 / std::sqrt(state.eps + var);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean) * inv;
  }
  return out;
}

Matrix bn_jacobian_row_block(const BnBatchState& state, BnMode mode, std::size_t row) {
  validate(state, mode);
  if (row >= state.x.rows()) throw std::out_of_range("batch norm row out of range");
  const auto n = static_cast<Eigen::Index>(state.x.cols());
  const double nd = static_cast<double>(n);
  if (mode == BnMode::kEval) {
    return Matrix::Identity(n, n) / std::sqrt(state.eps + state.var[row]);
  }
  // bn = v o m with m(x) = x - mean(x) 1 and v(y) = y / s, s^2 = eps + |y|^2 / N:
  //   dv/dy = s^-1 (I - y y^T / (N s^2)),  dm/dx = I - 1 1^T / N.
  double mean = 0.0;
  double var = 0.0;
  row_stats(state.x, row, mean, var);
  const double s = std::sqrt(state.eps + var);
  Vector y(n);
  for (Eigen::Index j = 0; j < n; ++j) y[j] = state.x(row, static_cast<std::size_t>(j)) - mean;
  const Matrix dv = (Matrix::Identity(n, n) - y * y.transpose() / (nd * s * s)) / s;
  const Matrix dm = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / nd);
  return dv * dm;
}

Matrix bn_jacobian_dense(const BnBatchState& state, BnMode mode) {
  validate(state, mode);
  const std::size_t d = state.x.rows();
  const std::size_t n = state.x.cols();
  if (d * n > kBnDenseCap) {
    throw std::invalid_argument("bn_jacobian_dense: d*N = " + std::to_string(d * n) +
                                " exceeds the dense cap " + std::to_string(kBnDenseCap));
  }
  const auto dn = static_cast<Eigen::Index>(d * n);
  const auto ni = static_cast<Eigen::Index>(n);
  Matrix jac = Matrix::Zero(dn, dn);
  for (std::size_t i = 0; i < d; ++i) {
    const auto off = static_cast<Eigen::Index>(i * n);
    jac.block(off, off, ni, ni) = bn_jacobian_row_block(state, mode, i);
  }
  return jac;
}

double loglog_slope(const std::vector<double>& n, const std::vector<double>& values) {
  if (n.size() != values.size() || n.size() < 2) {
    throw std::invalid_argument("slope fit needs at least two matched points");
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    mx += std::log(n[k]);
    my += std::log(values[k]);
  }
  mx /= static_cast<double>(n.size());
  my /= static_cast<double>(n.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const double dx = std::log(n[k]) - mx;
    sxy += dx * (std::log(values[k]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw std::invalid_argument("slope fit needs distinct N values");
  return sxy / sxx;
}

BnGapSweep bn_gap_sweep(std::size_t d, const std::vector<std::size_t>& n_list, std::uint64_t seed,
                        double eps, unsigned threads) {
  if (d == 0 || n_list.empty()) throw std::invalid_argument("bn_gap_sweep needs d >= 1 and N values");
  BnGapSweep sweep;
  sweep.points.resize(n_list.size());
  parallel_for(n_list.size(), threads, [&](std::size_t k) {
    const std::size_t n = n_list[k];
    Rng rng(derive_seed(seed, k));
    Tensor x(Shape{d, n});
    for (auto& v : x.storage()) v = uniform(rng, -1.0, 1.0);
    const BnBatchState state = BnBatchState::from_batch(std::move(x), eps);
    BnGapPoint p;
    p.n = n;
    for (std::size_t i = 0; i < d; ++i) {
      const Matrix diff = bn_jacobian_row_block(state, BnMode::kTrain, i) -
                          bn_jacobian_row_block(state, BnMode::kEval, i);
      p.gap = std::max(p.gap, diff.cwiseAbs().maxCoeff());
      PowerOptions opts;
      opts.seed = derive_seed(seed, 1000 + k);
      p.spectral_gap = std::max(p.spectral_gap, singular_norm(dense_operator(diff), opts).value);
    }
    sweep.points[k] = p;
  });
  if (sweep.points.size() >= 2) {
    std::vector<double> ns, gaps;
    for (const auto& p : sweep.points) {
      ns.push_back(static_cast<double>(p.n));
      gaps.push_back(p.gap);
    }
    sweep.slope = loglog_slope(ns, gaps);
  }
  return sweep;
}

void write_bn_gap_csv(std::ostream& out, const BnGapSweep& sweep) {
  out << "N,gap,fitted_slope\n";
  for (std::size_t k = 0; k < sweep.points.size(); ++k) {
    const auto& p = sweep.points[k];
    out << p.n << ',' << format_double(p.gap) << ',';
    if (k + 1 == sweep.points.size()) out << format_double(sweep.slope);
    out << '\n';
  }
}

}  // namespace curvlab
