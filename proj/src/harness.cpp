#include "curvlab/harness.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include "curvlab/bn_analysis.hpp"
#include "curvlab/csv.hpp"
#include "curvlab/distributions.hpp"
#include "curvlab/errors.hpp"
#include "curvlab/parallel.hpp"
#include "curvlab/rng.hpp"
#include "curvlab/spectral.hpp"

namespace curvlab {

using nlohmann::json;

namespace {

struct KindInfo {
  ExperimentKind kind;
  std::string_view name;
  std::string_view subcommand;
  std::set<std::string> option_keys;
};

const std::vector<KindInfo>& kind_table() {
  static const std::vector<KindInfo> table{
      {ExperimentKind::kLabelSmoothing, "label-smoothing-sweep", "sweep-smoothing", {"accuracy_target"}},
      {ExperimentKind::kInputScaling, "input-scaling-sweep", "sweep-scaling", {}},
      {ExperimentKind::kRegressionFrequency,
       "regression-frequency",
       "regression-freq",
       {"gaussian_steps", "relu_steps", "gaussian_high_first_scale", "gaussian_low_first_scale",
        "pretrain_frequency", "pretrain_points", "pretrain_lr", "pretrain_steps",
        "pretrain_stop_loss"}},
      {ExperimentKind::kWeightDecay, "weight-decay-sweep", "sweep-wd", {}},
      {ExperimentKind::kBnCheck, "bn-check", "bn-check", {"dim", "eps"}},
      {ExperimentKind::kBoundEval,
       "bound-eval",
       "bound-eval",
       {"distribution", "out_dim", "softmaxed", "eps", "delta", "cost_lip", "reference_size",
        "lipschitz_pairs", "pair_radius", "coverage_trials", "network_file", "params_file"}},
      {ExperimentKind::kMaxIneqCheck,
       "max-ineq-check",
       "maxineq-check",
       {"distribution", "probes", "mc_trials", "reference_size", "lipschitz_pairs", "mlp_hidden",
        "mlp_out"}},
  };
  return table;
}

const KindInfo& info(ExperimentKind kind) {
  for (const auto& k : kind_table()) {
    if (k.kind == kind) return k;
  }
  throw std::invalid_argument("unknown experiment kind");
}

// ---- strict JSON access ----------------------------------------------------

void check_keys(const json& doc, const std::set<std::string>& keys, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!keys.count(it.key())) throw ConfigError("unknown " + where + " key '" + it.key() + "'");
  }
}

std::string where_key(const std::string& where, const char* key) { return where + "." + key; }

bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

double get_double(const json& doc, const char* key, double fallback, const std::string& where) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_number()) throw ConfigError(where_key(where, key) + " must be a number");
  return v.get<double>();
}

std::uint64_t get_u64(const json& doc, const char* key, std::uint64_t fallback, const std::string& where) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!non_negative_integer(v)) throw ConfigError(where_key(where, key) + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::size_t get_size(const json& doc, const char* key, std::size_t fallback, const std::string& where) {
  return static_cast<std::size_t>(get_u64(doc, key, fallback, where));
}

bool get_bool(const json& doc, const char* key, bool fallback, const std::string& where) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_boolean()) throw ConfigError(where_key(where, key) + " must be a boolean");
  return v.get<bool>();
}

std::string get_string(const json& doc, const char* key, const std::string& fallback,
                       const std::string& where) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_string()) throw ConfigError(where_key(where, key) + " must be a string");
  return v.get<std::string>();
}

std::vector<double> get_doubles(const json& doc, const char* key, std::vector<double> fallback,
                                const std::string& where) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_array()) throw ConfigError(where_key(where, key) + " must be an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(where_key(where, key) + " entries must be numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<std::size_t> get_sizes(const json& doc, const char* key, std::vector<std::size_t> fallback,
                                   const std::string& where) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_array()) throw ConfigError(where_key(where, key) + " must be an array");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!non_negative_integer(e)) {
      throw ConfigError(where_key(where, key) + " entries must be non-negative integers");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

template <class Parse>
auto rethrow_as_config(const std::string& where, Parse&& parse) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

DatasetSpec dataset_from_json(const json& doc) {
  static const std::set<std::string> kKeys{"name", "size", "dim", "classes", "spread", "holdout", "seed"};
  check_keys(doc, kKeys, "dataset");
  DatasetSpec d;
  d.name = get_string(doc, "name", d.name, "dataset");
  d.size = get_size(doc, "size", d.size, "dataset");
  d.dim = get_size(doc, "dim", d.dim, "dataset");
  d.classes = get_size(doc, "classes", d.classes, "dataset");
  d.spread = get_double(doc, "spread", d.spread, "dataset");
  d.holdout = get_double(doc, "holdout", d.holdout, "dataset");
  d.seed = get_u64(doc, "seed", d.seed, "dataset");
  return d;
}

NetworkSpec network_spec_from_json(const json& doc) {
  static const std::set<std::string> kKeys{"hidden", "activation", "batch_norm"};
  check_keys(doc, kKeys, "network");
  NetworkSpec n;
  n.hidden = get_sizes(doc, "hidden", n.hidden, "network");
  n.activation = rethrow_as_config("network.activation", [&] {
    return parse_layer_kind(get_string(doc, "activation", std::string(to_string(n.activation)), "network"));
  });
  if (doc.contains("batch_norm") && !doc.at("batch_norm").is_null()) {
    n.batch_norm = rethrow_as_config("network.batch_norm", [&] {
      return parse_bn_mode(get_string(doc, "batch_norm", "train", "network"));
    });
  }
  return n;
}

CostSpec cost_from_json(const json& doc) {
  static const std::set<std::string> kKeys{"kind", "label_smoothing", "subtract_label_entropy"};
  check_keys(doc, kKeys, "cost");
  CostSpec c;
  c.kind = rethrow_as_config("cost.kind", [&] {
    return parse_cost_kind(get_string(doc, "kind", std::string(to_string(c.kind)), "cost"));
  });
  c.label_smoothing = get_double(doc, "label_smoothing", 0.0, "cost");
  c.subtract_label_entropy =
      get_bool(doc, "subtract_label_entropy", c.kind == CostKind::kCrossEntropy, "cost");
  return c;
}

TrainConfig train_from_json(const json& doc) {
  static const std::set<std::string> kKeys{"learning_rate", "momentum",  "weight_decay",
                                           "batch_size",    "ghost_batches", "max_steps",
                                           "stop_loss",     "seed"};
  check_keys(doc, kKeys, "train");
  TrainConfig t;
  t.learning_rate = get_double(doc, "learning_rate", t.learning_rate, "train");
  t.momentum = get_double(doc, "momentum", t.momentum, "train");
  t.weight_decay = get_double(doc, "weight_decay", t.weight_decay, "train");
  t.batch_size = get_size(doc, "batch_size", t.batch_size, "train");
  t.ghost_batches = get_size(doc, "ghost_batches", t.ghost_batches, "train");
  t.max_steps = get_size(doc, "max_steps", t.max_steps, "train");
  if (doc.contains("stop_loss") && !doc.at("stop_loss").is_null()) {
    t.stop_loss = get_double(doc, "stop_loss", 0.0, "train");
  }
  t.seed = get_u64(doc, "seed", t.seed, "train");
  return t;
}

MetricSchedule metrics_from_json(const json& doc) {
  static const std::set<std::string> kKeys{
      "every",        "sharpness",  "jacobian_max", "softmaxed_jacobian", "gn_norm",
      "feature_norms", "jacobian_eval_mode", "probe_size", "probe_seed", "power_tol",
      "power_max_iter", "power_seed"};
  check_keys(doc, kKeys, "metrics");
  MetricSchedule m;
  m.every = get_size(doc, "every", m.every, "metrics");
  m.sharpness = get_bool(doc, "sharpness", m.sharpness, "metrics");
  m.jacobian_max = get_bool(doc, "jacobian_max", m.jacobian_max, "metrics");
  m.softmaxed_jacobian = get_bool(doc, "softmaxed_jacobian", m.softmaxed_jacobian, "metrics");
  m.gn_norm = get_bool(doc, "gn_norm", m.gn_norm, "metrics");
  m.feature_norms = get_bool(doc, "feature_norms", m.feature_norms, "metrics");
  m.jacobian_eval_mode = get_bool(doc, "jacobian_eval_mode", m.jacobian_eval_mode, "metrics");
  m.probe_size = get_size(doc, "probe_size", m.probe_size, "metrics");
  m.probe_seed = get_u64(doc, "probe_seed", m.probe_seed, "metrics");
  m.power.tol = get_double(doc, "power_tol", m.power.tol, "metrics");
  m.power.max_iter = static_cast<int>(get_size(doc, "power_max_iter", static_cast<std::size_t>(m.power.max_iter), "metrics"));
  m.power.seed = get_u64(doc, "power_seed", m.power.seed, "metrics");
  return m;
}

// ---- table helpers -----------------------------------------------------------

std::string cell(double v) { return format_double(v); }
std::string cell(std::size_t v) { return std::to_string(v); }
std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// Mean and std rows over the numeric cells of `values` (one vector per trial).
void append_summary(ResultTable& table, const std::vector<std::string>& prefix_mean,
                    const std::vector<std::string>& prefix_std,
                    const std::vector<std::vector<std::optional<double>>>& values, std::size_t width) {
  std::vector<std::string> mean_row = prefix_mean;
  std::vector<std::string> std_row = prefix_std;
  for (std::size_t c = 0; c < width; ++c) {
    std::vector<double> column_values;
    for (const auto& v : values) {
      if (c < v.size() && v[c]) column_values.push_back(*v[c]);
    }
    if (column_values.empty()) {
      mean_row.emplace_back();
      std_row.emplace_back();
    } else {
      const MeanStd ms = mean_std(column_values);
      mean_row.push_back(cell(ms.mean));
      std_row.push_back(cell(ms.std));
    }
  }
  table.rows.push_back(std::move(mean_row));
  table.rows.push_back(std::move(std_row));
}

std::uint64_t trial_init_seed(std::uint64_t seed, std::size_t trial) { return derive_seed(seed, trial); }

TrainConfig trial_train_config(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t trial) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.train.seed ^ seed, 1000 + trial);
  return t;
}

LayeredNetwork build_network(const NetworkSpec& spec, std::size_t in, std::size_t out) {
  return make_mlp(in, spec.hidden, out, spec.activation, spec.batch_norm);
}

bool logged(const TrainRecord& r, const TrainTrace& t, const MetricSchedule& s) {
  return r.step % s.every == 0 || &r == &t.records.back();
}

double spectral_norm_of(const Tensor& w) {
  return Eigen::JacobiSVD<Matrix>(to_matrix(w)).singularValues()(0);
}

double accuracy(const LayeredNetwork& net, const Tensor& x, const std::vector<std::size_t>& labels) {
  const Tensor z = forward_batch(net, x);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < z.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.rows(); ++i) {
      if (z(i, j) > z(best, j)) best = i;
    }
    hits += best == labels[j] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

void require_classification(const ExperimentConfig& cfg) {
  if (cfg.dataset.name != "gaussian-clusters") {
    throw ConfigError(std::string(to_string(cfg.kind)) + " needs a classification dataset");
  }
  if (cfg.cost.kind != CostKind::kCrossEntropy) {
    throw ConfigError(std::string(to_string(cfg.kind)) + " needs the cross-entropy cost");
  }
}

// ---- trace sweeps (label smoothing, input scaling) --------------------------

struct TraceTask {
  std::vector<std::vector<std::string>> rows;
  // Numeric cells (loss, sharpness, jacobian, features...) at the final and peak step.
  std::vector<std::optional<double>> final_values;
  std::vector<std::optional<double>> peak_values;
  bool failed = false;
};

std::vector<std::optional<double>> record_values(const TrainRecord& r, std::size_t features) {
  std::vector<std::optional<double>> v{r.loss, r.sharpness, r.jacobian_max};
  for (std::size_t k = 0; k < features; ++k) {
    v.push_back(k < r.feature_norms.size() ? std::optional<double>(r.feature_norms[k]) : std::nullopt);
  }
  return v;
}

struct TraceSweepSetup {
  std::string value_column;
  bool with_features = false;
  // Per sweep value: inputs, targets and cost.
  std::function<std::tuple<Tensor, Tensor, CostSpec>(double)> problem;
  // Per-trial step budget overriding train.max_steps.
  std::vector<std::size_t> trial_steps;
};

ResultTable run_trace_sweep(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads,
                            const SyntheticDataset& data, const TraceSweepSetup& setup) {
  const std::vector<double> values = cfg.sweep_numbers();
  MetricSchedule schedule = cfg.metrics;
  schedule.sharpness = true;
  schedule.jacobian_max = true;
  schedule.feature_norms = setup.with_features;
  const LayeredNetwork proto = build_network(cfg.network, data.x.rows(), data.classes);
  std::size_t blocks = 0;
  for (const auto& layer : proto.layers()) blocks += layer.kind == LayerKind::kLinear ? 1 : 0;
  const std::size_t feature_count = setup.with_features ? blocks : 0;

  const std::size_t tasks = values.size() * cfg.trials;
  std::vector<TraceTask> results(tasks);
  parallel_for(tasks, threads, [&](std::size_t task) {
    const std::size_t vi = task / cfg.trials;
    const std::size_t trial = task % cfg.trials;
    const double value = values[vi];
    TraceTask& out = results[task];
    auto [x, y, cost] = setup.problem(value);
    LayeredNetwork net = proto;
    net.initialize(trial_init_seed(seed, trial));
    const std::string label = cell(value);
    TrainConfig tc = trial_train_config(cfg, seed, trial);
    if (!setup.trial_steps.empty()) tc.max_steps = setup.trial_steps[trial];
    try {
      const TrainTrace trace = train(net, cost, x, y, tc, schedule);
      out.peak_values.assign(3 + feature_count, std::nullopt);
      for (const auto& r : trace.records) {
        if (!logged(r, trace, schedule)) continue;
        std::vector<std::string> row{"trace", label, cell(trial), cell(r.step), cell(r.loss),
                                     cell(r.sharpness), cell(r.jacobian_max)};
        for (std::size_t k = 0; k < feature_count; ++k) {
          row.push_back(k < r.feature_norms.size() ? cell(r.feature_norms[k]) : std::string());
        }
        out.rows.push_back(std::move(row));
        const auto v = record_values(r, feature_count);
        for (std::size_t c = 0; c < v.size(); ++c) {
          if (v[c] && (!out.peak_values[c] || *v[c] > *out.peak_values[c])) out.peak_values[c] = v[c];
        }
      }
      out.final_values = record_values(trace.records.back(), feature_count);
    } catch (const DivergenceError&) {
      out.failed = true;
      out.rows.clear();
      std::vector<std::string> row{"failed", label, cell(trial)};
      row.resize(7 + feature_count);
      out.rows.push_back(std::move(row));
    }
  });

  ResultTable table;
  table.header = {"kind", setup.value_column, "trial", "step", "loss", "sharpness", "jacobian_max"};
  for (std::size_t k = 0; k < feature_count; ++k) table.header.push_back("feature_norm_" + std::to_string(k + 1));
  for (const auto& r : results) {
    for (const auto& row : r.rows) table.rows.push_back(row);
  }
  const std::size_t width = 3 + feature_count;
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    std::vector<std::vector<std::optional<double>>> finals, peaks;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
      const TraceTask& r = results[vi * cfg.trials + trial];
      if (r.failed) continue;
      finals.push_back(r.final_values);
      peaks.push_back(r.peak_values);
    }
    const std::string label = cell(values[vi]);
    append_summary(table, {"final_mean", label, "", ""}, {"final_std", label, "", ""}, finals, width);
    append_summary(table, {"peak_mean", label, "", ""}, {"peak_std", label, "", ""}, peaks, width);
  }
  return table;
}

// ---- regression frequency ------------------------------------------------------

struct RegressionOptions {
  std::size_t gaussian_steps = 10000;
  std::size_t relu_steps = 100000;
  double gaussian_high_first_scale = 1.0;
  double gaussian_low_first_scale = 0.0625;
  double pretrain_frequency = 3.0;
  std::size_t pretrain_points = 64;
  double pretrain_lr = 1e-4;
  std::size_t pretrain_steps = 2000;
  double pretrain_stop_loss = 0.0;
};

RegressionOptions regression_options(const json& doc) {
  const std::string w = "options";
  RegressionOptions o;
  o.gaussian_steps = get_size(doc, "gaussian_steps", o.gaussian_steps, w);
  o.relu_steps = get_size(doc, "relu_steps", o.relu_steps, w);
  o.gaussian_high_first_scale = get_double(doc, "gaussian_high_first_scale", o.gaussian_high_first_scale, w);
  o.gaussian_low_first_scale = get_double(doc, "gaussian_low_first_scale", o.gaussian_low_first_scale, w);
  o.pretrain_frequency = get_double(doc, "pretrain_frequency", o.pretrain_frequency, w);
  o.pretrain_points = get_size(doc, "pretrain_points", o.pretrain_points, w);
  o.pretrain_lr = get_double(doc, "pretrain_lr", o.pretrain_lr, w);
  o.pretrain_steps = get_size(doc, "pretrain_steps", o.pretrain_steps, w);
  o.pretrain_stop_loss = get_double(doc, "pretrain_stop_loss", o.pretrain_stop_loss, w);
  if (o.pretrain_points < 2) throw ConfigError("options.pretrain_points must be >= 2");
  if (!(o.pretrain_lr > 0.0)) throw ConfigError("options.pretrain_lr must be positive");
  return o;
}

Tensor linspace_row(double lo, double hi, std::size_t n) {
  Tensor x(Shape{1, n});
  for (std::size_t j = 0; j < n; ++j) {
    x(0, j) = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n - 1);
  }
  return x;
}

// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
void pretrain_adam(LayeredNetwork& net, const CostSpec& cost, const Tensor& x, const Tensor& y,
                   double lr, std::size_t steps, double stop_loss) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  Tensor m(net.params().shape());
  Tensor v(net.params().shape());
  double b1 = 1.0, b2 = 1.0;
  for (std::size_t step = 0; step < steps; ++step) {
    const auto [l, g] = loss_and_grad(net, cost, x, y);
    if (!std::isfinite(l)) throw DivergenceError("pretraining loss is not finite");
    if (l <= stop_loss) return;
    b1 *= kBeta1;
    b2 *= kBeta2;
    Tensor theta = net.params();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
      const double mh = m[k] / (1.0 - b1);
      const double vh = v[k] / (1.0 - b2);
      theta[k] -= lr * mh / (std::sqrt(vh) + kEps);
    }
    net.set_params(std::move(theta));
  }
}

void scale_first_weight(LayeredNetwork& net, double factor) {
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (net.layer(l).kind != LayerKind::kLinear) continue;
    net.set_weight(l, factor * net.weight(l));
    return;
  }
}

std::size_t first_linear(const LayeredNetwork& net) {
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (net.layer(l).kind == LayerKind::kLinear) return l;
  }
  throw std::invalid_argument("network has no linear layer");
}

// ---- bound evaluation -------------------------------------------------------------

DistributionSpec distribution_option(const json& options, std::size_t fallback_dim) {
  if (!options.contains("distribution")) return DistributionSpec::hypercube(fallback_dim);
  return rethrow_as_config("options.distribution",
                           [&] { return distribution_from_json(options.at("distribution")); });
}

}  // namespace

// ---- public API ------------------------------------------------------------------

std::string_view to_string(ExperimentKind kind) { return info(kind).name; }

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (const auto& k : kind_table()) {
    if (k.name == name) return k.kind;
  }
  throw ConfigError("unknown experiment '" + std::string(name) + "'");
}

std::string_view subcommand_name(ExperimentKind kind) { return info(kind).subcommand; }

const std::vector<ExperimentKind>& all_experiment_kinds() {
  static const std::vector<ExperimentKind> kinds = [] {
    std::vector<ExperimentKind> out;
    for (const auto& k : kind_table()) out.push_back(k.kind);
    return out;
  }();
  return kinds;
}

std::vector<double> ExperimentConfig::sweep_numbers() const {
  std::vector<double> out;
  for (const auto& v : sweep) {
    if (!v.is_number()) throw ConfigError("sweep values of " + std::string(to_string(kind)) + " must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string ExperimentConfig::output_name() const {
  return output.empty() ? std::string(to_string(kind)) + ".csv" : output;
}

void ExperimentConfig::validate() const {
  if (sweep.empty()) throw ConfigError("sweep values must be non-empty");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (metrics.every == 0) throw ConfigError("metrics.every must be >= 1");
  if (output.find('/') != std::string::npos) throw ConfigError("output must be a plain file name");
  check_keys(options, info(kind).option_keys, "options");
  train.validate();
  switch (kind) {
    case ExperimentKind::kRegressionFrequency:
      for (const auto& v : sweep) {
        if (!v.is_string() || (v != "gaussian" && v != "relu")) {
          throw ConfigError("regression-frequency sweep values must be \"gaussian\" or \"relu\"");
        }
      }
      break;
    case ExperimentKind::kBnCheck:
    case ExperimentKind::kBoundEval:
      for (double n : sweep_numbers()) {
        if (!(n >= 1.0) || n != std::floor(n)) throw ConfigError("sweep values must be sample sizes");
      }
      break;
    case ExperimentKind::kMaxIneqCheck:
      for (double e : sweep_numbers()) {
        if (!(e >= 0.0)) throw ConfigError("sweep values must be eps >= 0");
      }
      break;
    default:
      sweep_numbers();
  }
}

ExperimentConfig experiment_config_from_json(const json& doc) {
  static const std::set<std::string> kKeys{"experiment", "seed",  "dataset", "network",
                                           "cost",       "train", "metrics", "sweep",
                                           "trials",     "output", "options"};
  check_keys(doc, kKeys, "config");
  if (!doc.contains("experiment")) throw ConfigError("config needs an 'experiment' key");
  ExperimentConfig cfg;
  cfg.kind = parse_experiment_kind(get_string(doc, "experiment", "", "config"));
  cfg.seed = get_u64(doc, "seed", 0, "config");
  if (doc.contains("dataset")) cfg.dataset = dataset_from_json(doc.at("dataset"));
  if (doc.contains("network")) cfg.network = network_spec_from_json(doc.at("network"));
  if (doc.contains("cost")) cfg.cost = cost_from_json(doc.at("cost"));
  if (doc.contains("train")) cfg.train = train_from_json(doc.at("train"));
  if (doc.contains("metrics")) cfg.metrics = metrics_from_json(doc.at("metrics"));
  if (!doc.contains("sweep") || !doc.at("sweep").is_array()) throw ConfigError("config needs a 'sweep' array");
  for (const auto& v : doc.at("sweep")) cfg.sweep.push_back(v);
  cfg.trials = get_size(doc, "trials", 1, "config");
  cfg.output = get_string(doc, "output", "", "config");
  if (doc.contains("options")) cfg.options = doc.at("options");
  cfg.source = doc;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(doc);
}

SyntheticDataset make_dataset(const DatasetSpec& spec) {
  SyntheticDataset data;
  data.name = spec.name;
  data.seed = spec.seed;
  Rng rng(spec.seed);
  if (spec.name == "regression-points") {
    if (spec.size < 2) throw ConfigError("regression-points needs size >= 2");
    data.x = linspace_row(-1.0, 1.0, spec.size);
    data.y = Tensor(Shape{1, spec.size});
    for (std::size_t j = 0; j < spec.size; ++j) data.y(0, j) = uniform(rng, -1.0, 1.0);
    return data;
  }
  if (spec.name != "gaussian-clusters") throw ConfigError("unknown dataset '" + spec.name + "'");
  if (spec.classes < 2 || spec.dim == 0) throw ConfigError("gaussian-clusters needs classes >= 2 and dim >= 1");
  if (!(spec.spread >= 0.0)) throw ConfigError("dataset.spread must be >= 0");
  if (!(spec.holdout >= 0.0 && spec.holdout < 1.0)) throw ConfigError("dataset.holdout must lie in [0, 1)");
  const auto n_test = static_cast<std::size_t>(std::llround(spec.holdout * static_cast<double>(spec.size)));
  if (spec.size <= n_test) throw ConfigError("dataset has no training points");
  const std::size_t n_train = spec.size - n_test;

  Tensor centres(Shape{spec.dim, spec.classes});
  for (auto& v : centres.storage()) v = normal(rng);
  Tensor all(Shape{spec.dim, spec.size});
  std::vector<std::size_t> labels(spec.size);
  for (std::size_t j = 0; j < spec.size; ++j) {
    labels[j] = j % spec.classes;
    for (std::size_t i = 0; i < spec.dim; ++i) all(i, j) = centres(i, labels[j]) + spec.spread * normal(rng);
  }
  data.classes = spec.classes;
  data.x = columns(all, 0, n_train);
  data.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.y = make_class_targets(data.labels, spec.classes, 0.0).y;
  if (n_test > 0) {
    data.x_test = columns(all, n_train, n_test);
    data.test_labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(n_train), labels.end());
    data.y_test = make_class_targets(data.test_labels, spec.classes, 0.0).y;
  }
  return data;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_std of an empty list");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::vector<double> weight_frobenius_norms(const LayeredNetwork& net) {
  std::vector<double> out;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (net.layer(l).kind == LayerKind::kLinear) out.push_back(norm2(net.weight(l)));
  }
  return out;
}

ResultTable run_label_smoothing_sweep(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  require_classification(cfg);
  const SyntheticDataset data = make_dataset(cfg.dataset);
  for (double alpha : cfg.sweep_numbers()) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("label smoothing must lie in [0, 1]");
  }
  ExperimentConfig run = cfg;
  run.metrics.softmaxed_jacobian = true;
  TraceSweepSetup setup;
  setup.value_column = "alpha";
  if (cfg.options.contains("accuracy_target")) {
    // Steps for the least smoothed run to reach the target train accuracy;
    // every smoothing level then trains for that many steps.
    const double target = get_double(cfg.options, "accuracy_target", 1.0, "options");
    if (!(target > 0.0 && target <= 1.0)) throw ConfigError("options.accuracy_target must lie in (0, 1]");
    if (!cfg.train.full_batch()) throw ConfigError("options.accuracy_target needs full-batch training");
    const auto values = cfg.sweep_numbers();
    const double alpha = *std::min_element(values.begin(), values.end());
    const Tensor y = make_class_targets(data.labels, data.classes, alpha).y;
    const CostSpec cost = CostSpec::cross_entropy(alpha, true);
    const LayeredNetwork proto = build_network(cfg.network, data.x.rows(), data.classes);
    setup.trial_steps.assign(cfg.trials, cfg.train.max_steps);
    parallel_for(cfg.trials, threads, [&](std::size_t trial) {
      LayeredNetwork net = proto;
      net.initialize(trial_init_seed(seed, trial));
      const TrainConfig tc = trial_train_config(cfg, seed, trial);
      OptimizerState state;
      for (std::size_t step = 0; step < tc.max_steps; ++step) {
        if (accuracy(net, data.x, data.labels) >= target) {
          setup.trial_steps[trial] = step;
          return;
        }
        try {
          full_batch_step_ghosted(net, cost, data.x, y, tc, state);
        } catch (const std::exception&) {
          return;
        }
      }
    });
  }
  setup.problem = [&](double alpha) {
    return std::make_tuple(data.x, make_class_targets(data.labels, data.classes, alpha).y,
                           CostSpec::cross_entropy(alpha, true));
  };
  return run_trace_sweep(run, seed, threads, data, setup);
}

ResultTable run_input_scaling_sweep(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  require_classification(cfg);
  if (cfg.network.batch_norm) throw ConfigError("input-scaling-sweep needs a network without batch norm");
  const SyntheticDataset data = make_dataset(cfg.dataset);
  TraceSweepSetup setup;
  setup.value_column = "scale";
  setup.with_features = true;
  setup.problem = [&](double s) {
    CostSpec cost = cfg.cost;
    const Tensor y = make_class_targets(data.labels, data.classes, cost.label_smoothing).y;
    return std::make_tuple(s * data.x, y, cost);
  };
  return run_trace_sweep(cfg, seed, threads, data, setup);
}

ResultTable run_regression_frequency(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  if (cfg.dataset.name != "regression-points") {
    throw ConfigError("regression-frequency needs the regression-points dataset");
  }
  const RegressionOptions opts = regression_options(cfg.options);
  const SyntheticDataset data = make_dataset(cfg.dataset);
  const CostSpec cost = cfg.cost;
  const Tensor xs = linspace_row(-1.0, 1.0, opts.pretrain_points);
  Tensor ys(xs.shape());
  for (std::size_t j = 0; j < xs.cols(); ++j) {
    ys(0, j) = std::sin(2.0 * std::numbers::pi * opts.pretrain_frequency * xs(0, j));
  }

  std::vector<std::string> activations;
  for (const auto& v : cfg.sweep) activations.push_back(v.get<std::string>());
  static const std::vector<std::string> kInits{"high-freq", "low-freq"};
  const std::size_t cells = activations.size() * kInits.size();
  const std::size_t tasks = cells * cfg.trials;

  struct Result {
    std::vector<std::optional<double>> values;
    bool failed = false;
  };
  std::vector<Result> results(tasks);
  parallel_for(tasks, threads, [&](std::size_t task) {
    const std::size_t c = task / cfg.trials;
    const std::size_t trial = task % cfg.trials;
    const std::string& act = activations[c / kInits.size()];
    const bool high = kInits[c % kInits.size()] == "high-freq";
    const bool gaussian = act == "gaussian";
    LayeredNetwork net = make_mlp(1, cfg.network.hidden, 1, parse_layer_kind(act));
    net.initialize(trial_init_seed(seed, trial));
    TrainConfig tc = trial_train_config(cfg, seed, trial);
    tc.max_steps = gaussian ? opts.gaussian_steps : opts.relu_steps;
    try {
      if (gaussian) {
        scale_first_weight(net, high ? opts.gaussian_high_first_scale : opts.gaussian_low_first_scale);
      } else if (high) {
        pretrain_adam(net, cost, xs, ys, opts.pretrain_lr, opts.pretrain_steps, opts.pretrain_stop_loss);
      }
      train(net, cost, data.x, data.y, tc, {});
      const auto norms = jacobian_norms_dense(net, data.x, false);
      const double jac = *std::max_element(norms.begin(), norms.end());
      const double sharp = sharpness(net, cost, data.x, data.y, cfg.metrics.power).value;
      const double first = spectral_norm_of(net.weight(first_linear(net)));
      results[task].values = {jac, sharp, first, loss(net, cost, data.x, data.y)};
    } catch (const DivergenceError&) {
      results[task].failed = true;
    }
  });

  ResultTable table;
  table.header = {"kind", "activation", "init", "trial", "jacobian_max", "sharpness", "first_layer_norm", "final_loss"};
  for (std::size_t task = 0; task < tasks; ++task) {
    const std::size_t c = task / cfg.trials;
    std::vector<std::string> row{results[task].failed ? "failed" : "trial", activations[c / kInits.size()],
                                 kInits[c % kInits.size()], cell(task % cfg.trials)};
    for (std::size_t k = 0; k < 4; ++k) {
      row.push_back(results[task].failed ? std::string() : cell(results[task].values[k]));
    }
    table.rows.push_back(std::move(row));
  }
  for (std::size_t c = 0; c < cells; ++c) {
    std::vector<std::vector<std::optional<double>>> values;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
      const Result& r = results[c * cfg.trials + trial];
      if (!r.failed) values.push_back(r.values);
    }
    const std::string& act = activations[c / kInits.size()];
    const std::string& init = kInits[c % kInits.size()];
    append_summary(table, {"summary_mean", act, init, ""}, {"summary_std", act, init, ""}, values, 4);
  }
  return table;
}

ResultTable run_weight_decay_sweep(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  require_classification(cfg);
  const SyntheticDataset data = make_dataset(cfg.dataset);
  if (data.x_test.size() == 0) throw ConfigError("weight-decay-sweep needs dataset.holdout > 0");
  const std::vector<double> values = cfg.sweep_numbers();
  for (double wd : values) {
    if (!(wd >= 0.0)) throw ConfigError("weight decay values must be >= 0");
  }
  MetricSchedule schedule = cfg.metrics;
  schedule.sharpness = true;
  schedule.jacobian_max = true;
  const CostSpec cost = cfg.cost;
  const Tensor y = make_class_targets(data.labels, data.classes, cost.label_smoothing).y;
  const Tensor y_test = make_class_targets(data.test_labels, data.classes, cost.label_smoothing).y;
  const LayeredNetwork proto = build_network(cfg.network, data.x.rows(), data.classes);
  const std::size_t layers = weight_frobenius_norms(proto).size();
  const std::size_t width = 7 + layers;  // step .. frobenius_total, numeric part

  struct Result {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::optional<double>> final_values;
    bool failed = false;
  };
  const std::size_t tasks = values.size() * cfg.trials;
  std::vector<Result> results(tasks);
  parallel_for(tasks, threads, [&](std::size_t task) {
    const std::size_t vi = task / cfg.trials;
    const std::size_t trial = task % cfg.trials;
    const std::string label = cell(values[vi]);
    LayeredNetwork net = proto;
    net.initialize(trial_init_seed(seed, trial));
    TrainConfig tc = trial_train_config(cfg, seed, trial);
    tc.weight_decay = values[vi];
    Result& out = results[task];
    try {
      const TrainTrace trace = train(net, cost, data.x, y, tc, schedule);
      for (const auto& r : trace.records) {
        if (!logged(r, trace, schedule) || &r == &trace.records.back()) continue;
        std::vector<std::string> row{"trace", label, cell(trial), cell(r.step), cell(r.loss), "", "",
                                     cell(r.sharpness), cell(r.jacobian_max)};
        row.resize(row.size() + layers + 1);
        out.rows.push_back(std::move(row));
      }
      const TrainRecord& last = trace.records.back();
      const double test = loss(net, cost, data.x_test, y_test);
      const auto frob = weight_frobenius_norms(net);
      double total = 0.0;
      for (double f : frob) total += f * f;
      total = std::sqrt(total);
      out.final_values = {static_cast<double>(last.step), last.loss, test, test - last.loss,
                          last.sharpness, last.jacobian_max};
      for (double f : frob) out.final_values.emplace_back(f);
      out.final_values.emplace_back(total);
      std::vector<std::string> row{"final", label, cell(trial), cell(last.step)};
      for (std::size_t k = 1; k < out.final_values.size(); ++k) row.push_back(cell(out.final_values[k]));
      out.rows.push_back(std::move(row));
    } catch (const DivergenceError&) {
      out.failed = true;
      out.rows.clear();
      std::vector<std::string> row{"failed", label, cell(trial)};
      row.resize(3 + width);
      out.rows.push_back(std::move(row));
    }
  });

  ResultTable table;
  table.header = {"kind", "weight_decay", "trial", "step", "train_loss", "test_loss", "gap", "sharpness", "jacobian_max"};
  for (std::size_t k = 0; k < layers; ++k) table.header.push_back("frobenius_" + std::to_string(k + 1));
  table.header.push_back("frobenius_total");
  for (const auto& r : results) {
    for (const auto& row : r.rows) table.rows.push_back(row);
  }
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    std::vector<std::vector<std::optional<double>>> finals;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
      const Result& r = results[vi * cfg.trials + trial];
      if (r.failed) continue;
      finals.emplace_back(r.final_values.begin() + 1, r.final_values.end());
    }
    const std::string label = cell(values[vi]);
    append_summary(table, {"final_mean", label, "", ""}, {"final_std", label, "", ""}, finals, width - 1);
  }
  return table;
}

ResultTable run_bn_check(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  const std::size_t dim = get_size(cfg.options, "dim", 1, "options");
  const double eps = get_double(cfg.options, "eps", 1e-5, "options");
  std::vector<std::size_t> ns;
  for (double n : cfg.sweep_numbers()) ns.push_back(static_cast<std::size_t>(n));
  const BnGapSweep sweep = rethrow_as_config("bn-check", [&] { return bn_gap_sweep(dim, ns, seed, eps, threads); });
  ResultTable table;
  table.header = {"N", "gap", "fitted_slope"};
  for (std::size_t k = 0; k < sweep.points.size(); ++k) {
    table.rows.push_back({cell(sweep.points[k].n), cell(sweep.points[k].gap),
                          k + 1 == sweep.points.size() ? cell(sweep.slope) : std::string()});
  }
  return table;
}

ResultTable run_bound_eval(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  const json& o = cfg.options;
  const std::string w = "options";
  const DistributionSpec dist = distribution_option(o, 2);
  const bool softmaxed = get_bool(o, "softmaxed", false, w);
  const std::vector<double> eps_list = get_doubles(o, "eps", {0.1}, w);
  const std::vector<double> delta_list = get_doubles(o, "delta", {0.0, 0.1}, w);
  const double cost_lip = get_double(o, "cost_lip", 1.0, w);
  const std::size_t coverage_trials = get_size(o, "coverage_trials", 0, w);
  for (double e : eps_list) {
    if (!(e >= 0.0)) throw ConfigError("options.eps values must be >= 0");
  }
  for (double d : delta_list) {
    if (!(d >= 0.0)) throw ConfigError("options.delta values must be >= 0");
  }
  if (!(cost_lip > 0.0)) throw ConfigError("options.cost_lip must be positive");

  LayeredNetwork net = [&] {
    if (o.contains("network_file") != o.contains("params_file")) {
      throw ConfigError("options.network_file and options.params_file go together");
    }
    if (o.contains("network_file")) {
      return rethrow_as_config("options.network_file", [&] {
        return load_network(get_string(o, "network_file", "", w), get_string(o, "params_file", "", w));
      });
    }
    LayeredNetwork fresh = build_network(cfg.network, dist.out_dim(), get_size(o, "out_dim", 2, w));
    fresh.initialize(derive_seed(seed, 0));
    return fresh;
  }();
  if (net.in_dim() != dist.out_dim()) throw ConfigError("network input does not match the distribution");

  CoverageOptions copts;
  copts.reference_size = get_size(o, "reference_size", 10000, w);
  copts.lipschitz_pairs = get_size(o, "lipschitz_pairs", 2000, w);
  copts.pair_radius = get_double(o, "pair_radius", copts.pair_radius, w);
  copts.trials = coverage_trials;
  copts.seed = derive_seed(seed, 1);
  copts.threads = threads;
  const JacobianReference ref =
      rethrow_as_config("bound-eval", [&] { return jacobian_reference(dist, net, softmaxed, copts); });
  const HProfile profile = make_h_profile(dist);

  ResultTable table;
  table.header = {"N", "eps", "delta", "max_jac", "jac_lip", "h", "sample_max_bound", "generalisation_bound"};
  if (coverage_trials > 0) {
    table.header.push_back("coverage_empirical");
    table.header.push_back("coverage_std_error");
  }
  for (double nd : cfg.sweep_numbers()) {
    const auto n = static_cast<std::size_t>(nd);
    for (double delta : delta_list) {
      double t = 0.0;
      if (delta > 0.0) t = ref.jac_lip > 0.0 ? delta / ref.jac_lip : std::numeric_limits<double>::infinity();
      const double h = h_eval(profile, t);
      const double max_bound = ref.jac_lip > 0.0 ? thm_sample_max_bound(nd, delta, ref.jac_lip, profile)
                                    : std::pow(1.0 - h, nd);
      std::optional<MonteCarloRate> coverage;
      if (coverage_trials > 0) coverage = sample_max_coverage(dist, net, softmaxed, ref, n, delta, copts);
      for (double eps : eps_list) {
        std::string gen_bound;
        if (eps == 0.0 || delta == 0.0) {
          gen_bound = cell(0.0);
        } else if (ref.jac_lip > 0.0) {
          gen_bound = cell(generalisation_bound(nd, eps, delta, ref.sup, ref.jac_lip, profile,
                                               dist.concentration_C, cost_lip));
        }
        std::vector<std::string> row{cell(n), cell(eps), cell(delta), cell(ref.sup), cell(ref.jac_lip),
                                     cell(h), cell(max_bound), gen_bound};
        if (coverage) {
          row.push_back(cell(coverage->rate));
          row.push_back(cell(coverage->std_error));
        }
        table.rows.push_back(std::move(row));
      }
    }
  }
  return table;
}

ResultTable run_max_ineq_check(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  const json& o = cfg.options;
  const std::string w = "options";
  const DistributionSpec dist = distribution_option(o, 1);
  std::vector<std::string> probes{"identity", "norm", "constant", "mlp"};
  if (o.contains("probes")) {
    if (!o.at("probes").is_array()) throw ConfigError("options.probes must be an array");
    probes.clear();
    for (const auto& p : o.at("probes")) {
      if (!p.is_string()) throw ConfigError("options.probes entries must be strings");
      probes.push_back(p.get<std::string>());
    }
  }
  MonteCarloOptions mc;
  mc.trials = get_size(o, "mc_trials", 100000, w);
  mc.reference_size = get_size(o, "reference_size", 100000, w);
  mc.lipschitz_pairs = get_size(o, "lipschitz_pairs", 10000, w);
  const auto mlp_hidden = get_sizes(o, "mlp_hidden", {16}, w);
  const std::size_t mlp_out = get_size(o, "mlp_out", 2, w);

  LayeredNetwork mlp = make_mlp(dist.out_dim(), mlp_hidden, mlp_out, LayerKind::kTanh);
  mlp.initialize(derive_seed(seed, 7));
  std::vector<VectorFunction> functions;
  for (const auto& p : probes) {
    if (p == "identity") {
      functions.emplace_back([](const Tensor& x) { return x; });
    } else if (p == "norm") {
      functions.emplace_back([](const Tensor& x) { return Tensor::vector({norm2(x)}); });
    } else if (p == "constant") {
      functions.emplace_back([](const Tensor&) { return Tensor::vector({1.0}); });
    } else if (p == "mlp") {
      functions.emplace_back([&mlp](const Tensor& x) { return forward_single(mlp, x, false); });
    } else {
      throw ConfigError("unknown probe '" + p + "'");
    }
  }
  const std::vector<double> eps_list = cfg.sweep_numbers();
  const std::size_t tasks = probes.size() * eps_list.size();
  std::vector<std::pair<MonteCarloRate, MonteCarloRate>> results(tasks);
  parallel_for(tasks, threads, [&](std::size_t task) {
    const std::size_t p = task / eps_list.size();
    MonteCarloOptions local = mc;
    // Same draws for every eps of a probe, so rates are monotone in eps.
    local.seed = derive_seed(seed, 100 + p);
    local.threads = 1;
    const double eps = eps_list[task % eps_list.size()];
    results[task] = {max_inequality_violation_rate(dist, functions[p], eps, local),
                     concentration_violation_rate(dist, functions[p], eps, local)};
  });

  ResultTable table;
  table.header = {"probe",        "eps",           "max_rate",  "max_bound",  "max_std_error",  "sup_estimate",
                  "max_lipschitz", "conc_rate",    "conc_bound", "conc_std_error", "mean_norm", "conc_lipschitz"};
  for (std::size_t task = 0; task < tasks; ++task) {
    const auto& [m, c] = results[task];
    table.rows.push_back({probes[task / eps_list.size()], cell(eps_list[task % eps_list.size()]), cell(m.rate),
                          cell(m.bound), cell(m.std_error), cell(m.reference), cell(m.lipschitz), cell(c.rate),
                          cell(c.bound), cell(c.std_error), cell(c.reference), cell(c.lipschitz)});
  }
  return table;
}

ExperimentRun run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  ExperimentRun run;
  run.seed = opts.seed.value_or(cfg.seed);
  const unsigned threads = std::max(1u, opts.threads);
  switch (cfg.kind) {
    case ExperimentKind::kLabelSmoothing:
      run.table = run_label_smoothing_sweep(cfg, run.seed, threads);
      break;
    case ExperimentKind::kInputScaling:
      run.table = run_input_scaling_sweep(cfg, run.seed, threads);
      break;
    case ExperimentKind::kRegressionFrequency:
      run.table = run_regression_frequency(cfg, run.seed, threads);
      break;
    case ExperimentKind::kWeightDecay:
      run.table = run_weight_decay_sweep(cfg, run.seed, threads);
      break;
    case ExperimentKind::kBnCheck:
      run.table = run_bn_check(cfg, run.seed, threads);
      break;
    case ExperimentKind::kBoundEval:
      run.table = run_bound_eval(cfg, run.seed, threads);
      break;
    case ExperimentKind::kMaxIneqCheck:
      run.table = run_max_ineq_check(cfg, run.seed, threads);
      break;
  }
  return run;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(cfg.source.dump()); }

std::string render_csv(const ExperimentConfig& cfg, const ExperimentRun& run) {
  std::ostringstream out;
  write_provenance(out, {config_hash(cfg), run.seed});
  write_row(out, run.table.header);
  for (const auto& row : run.table.rows) write_row(out, row);
  return out.str();
}

std::filesystem::path write_experiment(const ExperimentConfig& cfg, const RunOptions& opts,
                                       const std::filesystem::path& out_dir) {
  const ExperimentRun run = run_experiment(cfg, opts);
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / cfg.output_name();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << render_csv(cfg, run);
  if (!out) throw std::runtime_error("write failed for " + path.string());
  return path;
}

}  // namespace curvlab
