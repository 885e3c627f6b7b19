#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "curvlab/cost.hpp"
#include "curvlab/network.hpp"
#include "curvlab/spectral.hpp"
#include "curvlab/tensor.hpp"

namespace curvlab {

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  // 0 means full batch.
  std::size_t batch_size = 0;
  std::size_t ghost_batches = 1;
  std::size_t max_steps = 100;
  std::optional<double> stop_loss;
  std::uint64_t seed = 0;

  bool full_batch() const { return batch_size == 0; }
  void validate() const;
};

// Heavy-ball velocity carried between steps.
struct OptimizerState {
  Tensor velocity;
};

// Loss and gradient at the current parameters.
std::pair<double, Tensor> loss_and_grad(const LayeredNetwork& net, const CostSpec& cost,
                                        const Tensor& x, const Tensor& y);

// Size-weighted average over `ghost_batches` contiguous column chunks (the
// last may be shorter). Without train-mode batch norm this equals the
// full-batch loss and gradient.
std::pair<double, Tensor> ghosted_loss_and_grad(const LayeredNetwork& net, const CostSpec& cost,
                                                const Tensor& x, const Tensor& y,
                                                std::size_t ghost_batches);

// g <- g + wd theta; v <- momentum v + g; theta <- theta - lr v.
void apply_update(LayeredNetwork& net, const Tensor& grad, const TrainConfig& config,
                  OptimizerState& state);

// One step on the batch (X, Y); returns the pre-step loss.
double sgd_step(LayeredNetwork& net, const CostSpec& cost, const Tensor& x, const Tensor& y,
                const TrainConfig& config, OptimizerState& state);
double full_batch_step_ghosted(LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                               const Tensor& y, const TrainConfig& config, OptimizerState& state);

struct MetricSchedule {
  std::size_t every = 10;
  bool sharpness = false;
  bool jacobian_max = false;
  bool softmaxed_jacobian = false;
  bool gn_norm = false;
  bool feature_norms = false;
  // Evaluate Jacobians on an eval-mode copy whose batch statistics are
  // frozen on the probe set. Without it, train-mode batch norm is an error.
  bool jacobian_eval_mode = false;
  // Seeded subset of the training columns used for metrics; 0 = all.
  std::size_t probe_size = 128;
  std::uint64_t probe_seed = 0;
  PowerOptions power;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> sharpness;
  std::optional<double> jacobian_max;
  std::optional<double> gn_norm;
  std::vector<double> feature_norms;
};

struct TrainTrace {
  std::vector<TrainRecord> records;
  std::size_t steps_taken = 0;
  bool stopped = false;
};

// Probe columns chosen by the schedule (sorted indices).
std::vector<std::size_t> probe_indices(std::size_t n, const MetricSchedule& schedule);

// Spectral norms |f_l(X)|_2 of each block output, a block being a linear
// layer together with the parameter-free layers that follow it.
std::vector<double> feature_norms(const LayeredNetwork& net, const Tensor& x);

// Runs steps 0..max_steps. The loss is recorded every step; metrics every
// `every` steps and at the last step. Stops once the mean of the last 10
// losses is at most stop_loss; throws DivergenceError when the loss exceeds
// 1e6 times its initial value.
TrainTrace train(LayeredNetwork& net, const CostSpec& cost, const Tensor& x, const Tensor& y,
                 const TrainConfig& config, const MetricSchedule& schedule);

// Metric values at the current parameters, evaluated as train() does.
TrainRecord measure(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                    const Tensor& y, const MetricSchedule& schedule, std::size_t step = 0);

std::vector<std::string> trace_header(const MetricSchedule& schedule, std::size_t feature_count);
std::vector<std::string> trace_cells(const TrainRecord& record, const MetricSchedule& schedule,
                                     std::size_t feature_count);
void write_trace_csv(std::ostream& out, const TrainTrace& trace, const MetricSchedule& schedule);

}  // namespace curvlab
