#include "curvlab/trainer.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>

#include "curvlab/csv.hpp"
#include "curvlab/rng.hpp"

namespace curvlab {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (ghost_batches < 1) throw ConfigError("ghost_batches must be >= 1");
  if (ghost_batches > 1 && !full_batch()) {
    throw ConfigError("ghost_batches > 1 requires full-batch training");
  }
}

std::pair<double, Tensor> loss_and_grad(const LayeredNetwork& net, const CostSpec& cost,
                                        const Tensor& x, const Tensor& y) {
  auto program = [&](auto& g, auto theta) {
    (void)g;
    return loss_program(net, cost, theta, x, y);
  };
  try {
    return ad::value_and_grad(program, net.params());
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("training step aborted: ") + e.what());
  }
}

std::pair<double, Tensor> ghosted_loss_and_grad(const LayeredNetwork& net, const CostSpec& cost,
                                                const Tensor& x, const Tensor& y,
                                                std::size_t ghost_batches) {
  const std::size_t n = x.cols();
  if (ghost_batches < 1 || ghost_batches > n) {
    throw std::invalid_argument("ghost_batches must lie in [1, N]");
  }
  if (ghost_batches == 1) return loss_and_grad(net, cost, x, y);
  const std::size_t chunk = (n + ghost_batches - 1) / ghost_batches;
  double loss = 0.0;
  Tensor grad(net.params().shape());
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    const auto [l, g] = loss_and_grad(net, cost, columns(x, start, count), columns(y, start, count));
    const double w = static_cast<double>(count) / static_cast<double>(n);
    loss += w * l;
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += w * g[k];
  }
  return {loss, std::move(grad)};
}

void apply_update(LayeredNetwork& net, const Tensor& grad, const TrainConfig& config,
                  OptimizerState& state) {
  Tensor theta = net.params();
  if (state.velocity.size() != theta.size()) state.velocity = Tensor(theta.shape());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = grad[k] + config.weight_decay * theta[k];
    state.velocity[k] = config.momentum * state.velocity[k] + g;
    theta[k] -= config.learning_rate * state.velocity[k];
  }
  require_finite(theta, "updated parameters");
  net.set_params(std::move(theta));
}

double sgd_step(LayeredNetwork& net, const CostSpec& cost, const Tensor& x, const Tensor& y,
                const TrainConfig& config, OptimizerState& state) {
  auto [loss, grad] = loss_and_grad(net, cost, x, y);
  apply_update(net, grad, config, state);
  return loss;
}

double full_batch_step_ghosted(LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                               const Tensor& y, const TrainConfig& config, OptimizerState& state) {
  auto [loss, grad] = ghosted_loss_and_grad(net, cost, x, y, config.ghost_batches);
  apply_update(net, grad, config, state);
  return loss;
}

std::vector<std::size_t> probe_indices(std::size_t n, const MetricSchedule& schedule) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (schedule.probe_size == 0 || schedule.probe_size >= n) return idx;
  Rng rng(schedule.probe_seed);
  for (std::size_t k = 0; k < schedule.probe_size; ++k) {
    std::swap(idx[k], idx[k + uniform_index(rng, n - k)]);
  }
  idx.resize(schedule.probe_size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> feature_norms(const LayeredNetwork& net, const Tensor& x) {
  const auto acts = layer_activations(net, x);
  std::vector<double> out;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const bool block_end = l + 1 == net.depth() || net.layer(l + 1).kind == LayerKind::kLinear;
    if (!block_end) continue;
    const Matrix f = to_matrix(acts[l + 1]);
    out.push_back(Eigen::JacobiSVD<Matrix>(f).singularValues()(0));
  }
  return out;
}

TrainRecord measure(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                    const Tensor& y, const MetricSchedule& schedule, std::size_t step) {
  TrainRecord r;
  r.step = step;
  r.loss = loss(net, cost, x, y);
  if (schedule.sharpness) r.sharpness = sharpness(net, cost, x, y, schedule.power).value;
  if (schedule.gn_norm) {
    r.gn_norm = gauss_newton_norm(net, cost, x, y, GaussNewtonMode::kPrimal, schedule.power).value;
  }
  if (schedule.jacobian_max) {
    if (schedule.jacobian_eval_mode && net.has_train_bn()) {
      LayeredNetwork frozen = net;
      frozen.freeze_bn_statistics(x);
      frozen.set_bn_mode(BnMode::kEval);
      r.jacobian_max = jacobian_norms(frozen, x, schedule.softmaxed_jacobian, schedule.power).max;
    } else {
      r.jacobian_max = jacobian_norms(net, x, schedule.softmaxed_jacobian, schedule.power).max;
    }
  }
  if (schedule.feature_norms) r.feature_norms = feature_norms(net, x);
  return r;
}

TrainTrace train(LayeredNetwork& net, const CostSpec& cost, const Tensor& x, const Tensor& y,
                 const TrainConfig& config, const MetricSchedule& schedule) {
  config.validate();
  if (x.cols() != y.cols()) throw ShapeError("train: inputs and targets differ in N");
  if (schedule.every == 0) throw ConfigError("metric cadence must be >= 1");
  const bool wants_metrics =
      schedule.sharpness || schedule.jacobian_max || schedule.gn_norm || schedule.feature_norms;
  const auto probes = probe_indices(x.cols(), schedule);
  const Tensor xp = select_columns(x, probes);
  const Tensor yp = select_columns(y, probes);

  const std::size_t n = x.cols();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  Rng rng(config.seed);
  auto next_batch = [&](Tensor& bx, Tensor& by) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < config.batch_size; ++k) {
      if (cursor == n) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    bx = select_columns(x, idx);
    by = select_columns(y, idx);
  };

  TrainTrace trace;
  OptimizerState state;
  std::deque<double> window;
  double window_sum = 0.0;
  double initial = 0.0;
  for (std::size_t step = 0; step <= config.max_steps; ++step) {
    std::pair<double, Tensor> lg;
    if (config.full_batch()) {
      lg = ghosted_loss_and_grad(net, cost, x, y, config.ghost_batches);
    } else {
      Tensor bx, by;
      next_batch(bx, by);
      lg = loss_and_grad(net, cost, bx, by);
    }
    const double current = lg.first;
    if (step == 0) initial = current;
    if (!std::isfinite(current) || current > 1e6 * std::max(initial, 1e-300)) {
      throw DivergenceError("loss diverged at step " + std::to_string(step) + ": " +
                            format_double(current));
    }
    window.push_back(current);
    window_sum += current;
    if (window.size() > 10) {
      window_sum -= window.front();
      window.pop_front();
    }
    const bool stop =
        config.stop_loss && window_sum / static_cast<double>(window.size()) <= *config.stop_loss;
    const bool last = stop || step == config.max_steps;

    TrainRecord rec;
    if (wants_metrics && (last || step % schedule.every == 0)) {
      rec = measure(net, cost, xp, yp, schedule, step);
    }
    rec.step = step;
    rec.loss = current;
    trace.records.push_back(std::move(rec));
    trace.steps_taken = step;
    if (last) {
      trace.stopped = stop;
      break;
    }
    apply_update(net, lg.second, config, state);
  }
  return trace;
}

std::vector<std::string> trace_header(const MetricSchedule& schedule, std::size_t feature_count) {
  std::vector<std::string> h{"step", "loss"};
  if (schedule.sharpness) h.emplace_back("sharpness");
  if (schedule.jacobian_max) h.emplace_back("jacobian_max");
  if (schedule.gn_norm) h.emplace_back("gn_norm");
  if (schedule.feature_norms) {
    for (std::size_t l = 0; l < feature_count; ++l) h.push_back("feature_norm_" + std::to_string(l + 1));
  }
  return h;
}

std::vector<std::string> trace_cells(const TrainRecord& record, const MetricSchedule& schedule,
                                     std::size_t feature_count) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::vector<std::string> c{std::to_string(record.step), format_double(record.loss)};
  if (schedule.sharpness) c.push_back(opt(record.sharpness));
  if (schedule.jacobian_max) c.push_back(opt(record.jacobian_max));
  if (schedule.gn_norm) c.push_back(opt(record.gn_norm));
  if (schedule.feature_norms) {
    for (std::size_t l = 0; l < feature_count; ++l) {
      c.push_back(l < record.feature_norms.size() ? format_double(record.feature_norms[l]) : "");
    }
  }
  return c;
}

void write_trace_csv(std::ostream& out, const TrainTrace& trace, const MetricSchedule& schedule) {
  std::size_t features = 0;
  for (const auto& r : trace.records) features = std::max(features, r.feature_norms.size());
  write_row(out, trace_header(schedule, features));
  for (const auto& r : trace.records) write_row(out, trace_cells(r, schedule, features));
}

}  // namespace curvlab
