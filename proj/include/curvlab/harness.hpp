#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "curvlab/cost.hpp"
#include "curvlab/network.hpp"
#include "curvlab/tensor.hpp"
#include "curvlab/trainer.hpp"
#include "json.hpp"

namespace curvlab {

enum class ExperimentKind {
  kLabelSmoothing,
  kInputScaling,
  kRegressionFrequency,
  kWeightDecay,
  kBnCheck,
  kBoundEval,
  kMaxIneqCheck,
};

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);
// CLI subcommand running this kind, e.g. "sweep-smoothing".
std::string_view subcommand_name(ExperimentKind kind);
const std::vector<ExperimentKind>& all_experiment_kinds();

struct DatasetSpec {
  // "gaussian-clusters" or "regression-points".
  std::string name = "gaussian-clusters";
  std::size_t size = 512;
  std::size_t dim = 16;
  std::size_t classes = 4;
  // Cluster standard deviation; centres are standard normal in R^dim.
  double spread = 0.5;
  // Fraction of points moved to the held-out split.
  double holdout = 0.0;
  std::uint64_t seed = 0;
};

struct NetworkSpec {
  std::vector<std::size_t> hidden{32, 32};
  LayerKind activation = LayerKind::kTanh;
  std::optional<BnMode> batch_norm;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kLabelSmoothing;
  DatasetSpec dataset;
  NetworkSpec network;
  CostSpec cost;
  TrainConfig train;
  MetricSchedule metrics;
  // Numbers for most kinds; activation names for regression-frequency.
  std::vector<nlohmann::json> sweep;
  std::size_t trials = 1;
  // File name inside the output directory; empty means "<kind>.csv".
  std::string output;
  std::uint64_t seed = 0;
  // Kind-specific settings, parsed strictly by the runner.
  nlohmann::json options = nlohmann::json::object();
  // Document the config was parsed from; hashed into the provenance.
  nlohmann::json source = nlohmann::json::object();

  std::vector<double> sweep_numbers() const;
  std::string output_name() const;
  void validate() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct SyntheticDataset {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t classes = 0;
  Tensor x;
  // One-hot targets for classification, values for regression.
  Tensor y;
  std::vector<std::size_t> labels;
  Tensor x_test;
  Tensor y_test;
  std::vector<std::size_t> test_labels;
};

// Pure function of `spec`. Clusters: point j belongs to class j mod k;
// the held-out split is the last round(holdout * size) points. Regression
// points: x = linspace(-1, 1, size), y uniform on [-1, 1].
SyntheticDataset make_dataset(const DatasetSpec& spec);

struct RunOptions {
  // Overrides the config seed.
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

struct ResultTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct ExperimentRun {
  ResultTable table;
  std::uint64_t seed = 0;
};

ResultTable run_label_smoothing_sweep(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads);
ResultTable run_input_scaling_sweep(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads);
ResultTable run_regression_frequency(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads);
ResultTable run_weight_decay_sweep(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads);
ResultTable run_bn_check(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads);
ResultTable run_bound_eval(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads);
ResultTable run_max_ineq_check(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads);

ExperimentRun run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

std::uint64_t config_hash(const ExperimentConfig& cfg);
// Provenance comments, header, rows; LF line endings.
std::string render_csv(const ExperimentConfig& cfg, const ExperimentRun& run);
// Runs the experiment and writes out_dir / cfg.output_name(); returns the path.
std::filesystem::path write_experiment(const ExperimentConfig& cfg, const RunOptions& opts,
                                       const std::filesystem::path& out_dir);

struct MeanStd {
  double mean = 0.0;
  // Sample standard deviation; 0 for a single value.
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& values);

// Frobenius norm of each linear layer's weight matrix, in layer order.
std::vector<double> weight_frobenius_norms(const LayeredNetwork& net);

}  // namespace curvlab
