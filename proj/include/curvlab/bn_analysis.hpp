#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "curvlab/linear_operator.hpp"
#include "curvlab/network.hpp"
#include "curvlab/tensor.hpp"

namespace curvlab {

// A batch X together with the constants eval mode uses. By default the
// stored statistics are the batch's own, so train and eval differ only in
// whether the statistics depend on X.
struct BnBatchState {
  Tensor x;
  std::vector<double> mean;
  std::vector<double> var;
  double eps = 1e-5;

  static BnBatchState from_batch(Tensor x, double eps = 1e-5);
};

inline constexpr std::size_t kBnDenseCap = 10000;

Tensor bn_forward(const BnBatchState& state, BnMode mode);

// N x N Jacobian block of row i; batch norm never mixes rows.
Matrix bn_jacobian_row_block(const BnBatchState& state, BnMode mode, std::size_t row);

// Full (dN) x (dN) Jacobian on row-major flattened d x N matrices.
Matrix bn_jacobian_dense(const BnBatchState& state, BnMode mode);

struct BnGapPoint {
  std::size_t n = 0;
  // max |J_train - J_eval| over coordinates.
  double gap = 0.0;
  // |J_train - J_eval|_2; stays O(1) because of the rank-one mean term.
  double spectral_gap = 0.0;
};

struct BnGapSweep {
  std::vector<BnGapPoint> points;
  // Least-squares slope of log gap against log N.
  double slope = 0.0;
};

// Entries of X drawn i.i.d. uniform on [-1, 1]; one batch per N.
BnGapSweep bn_gap_sweep(std::size_t d, const std::vector<std::size_t>& n_list, std::uint64_t seed,
                        double eps = 1e-5, unsigned threads = 1);

double loglog_slope(const std::vector<double>& n, const std::vector<double>& values);

// Rows "N,gap,fitted_slope"; the slope is filled on the last row only.
void write_bn_gap_csv(std::ostream& out, const BnGapSweep& sweep);

}  // namespace curvlab
