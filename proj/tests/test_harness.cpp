#include "doctest.h"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "curvlab/csv.hpp"
#include "curvlab/distributions.hpp"
#include "curvlab/errors.hpp"
#include "curvlab/harness.hpp"
#include "curvlab/rng.hpp"
#include "test_support.hpp"

using namespace curvlab;
using namespace curvlab::testing;
using nlohmann::json;

namespace {

const std::filesystem::path kConfigDir = std::filesystem::path(CURVLAB_SOURCE_DIR) / "configs";

json smoke(const std::string& name) {
  std::ifstream in(kConfigDir / "smoke" / (name + ".json"));
  REQUIRE(in);
  json doc;
  in >> doc;
  return doc;
}

CsvTable rendered(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  std::istringstream in(render_csv(cfg, run_experiment(cfg, opts)));
  return read_csv(in);
}

std::vector<std::vector<std::string>> rows_of(const CsvTable& t, const std::string& kind) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : t.rows) {
    if (r[0] == kind) out.push_back(r);
  }
  return out;
}

std::size_t column_index(const CsvTable& t, const std::string& name) {
  for (std::size_t k = 0; k < t.header.size(); ++k) {
    if (t.header[k] == name) return k;
  }
  FAIL("missing column " << name);
  return 0;
}

// Rebuilds final/peak summaries from the trace rows of a trace sweep.
void check_trace_summaries(const CsvTable& t) {
  std::map<std::pair<std::string, std::string>, std::vector<std::vector<std::string>>> traces;
  for (const auto& r : rows_of(t, "trace")) traces[{r[1], r[2]}].push_back(r);
  std::map<std::string, std::vector<std::vector<double>>> finals, peaks;
  for (const auto& [key, rows] : traces) {
    std::vector<double> last, peak(t.header.size(), -INFINITY);
    for (std::size_t c = 4; c < t.header.size(); ++c) last.push_back(std::stod(rows.back()[c]));
    for (const auto& r : rows) {
      for (std::size_t c = 4; c < t.header.size(); ++c) {
        if (!r[c].empty()) peak[c] = std::max(peak[c], std::stod(r[c]));
      }
    }
    finals[key.first].push_back(last);
    peaks[key.first].push_back(std::vector<double>(peak.begin() + 4, peak.end()));
  }
  auto check = [&](const std::string& kind, const std::map<std::string, std::vector<std::vector<double>>>& src,
                   bool mean) {
    const auto rows = rows_of(t, kind);
    REQUIRE(rows.size() == src.size());
    for (const auto& r : rows) {
      const auto& trials = src.at(r[1]);
      for (std::size_t c = 4; c < t.header.size(); ++c) {
        std::vector<double> v;
        for (const auto& trial : trials) v.push_back(trial[c - 4]);
        const MeanStd ms = mean_std(v);
        CAPTURE(kind);
        CAPTURE(t.header[c]);
        CHECK(rel_err(std::stod(r[c]), mean ? ms.mean : ms.std, 1e-300) <= 1e-12);
      }
    }
  };
  check("final_mean", finals, true);
  check("final_std", finals, false);
  check("peak_mean", peaks, true);
  check("peak_std", peaks, false);
}

}  // namespace

TEST_CASE("experiment kinds and subcommands") {
  CHECK(all_experiment_kinds().size() == 7);
  for (ExperimentKind k : all_experiment_kinds()) CHECK(parse_experiment_kind(to_string(k)) == k);
  CHECK(subcommand_name(ExperimentKind::kLabelSmoothing) == "sweep-smoothing");
  CHECK(subcommand_name(ExperimentKind::kMaxIneqCheck) == "maxineq-check");
  CHECK_THROWS_AS(parse_experiment_kind("sweep"), ConfigError);
}

TEST_CASE("shipped configs parse") {
  for (const auto& dir : {kConfigDir, kConfigDir / "smoke"}) {
    std::size_t count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      CAPTURE(entry.path().string());
      CHECK_NOTHROW(load_experiment_config(entry.path()));
      ++count;
    }
    CHECK(count == 7);
  }
}

TEST_CASE("config parsing is strict") {
  const json good = smoke("label_smoothing");
  CHECK_NOTHROW(experiment_config_from_json(good));

  auto broken = [&](auto&& edit) {
    json doc = good;
    edit(doc);
    return doc;
  };
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["extra"] = 1; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["dataset"]["colour"] = 1; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["train"]["lr"] = 0.1; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["metrics"]["sharp"] = true; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["options"]["speed"] = 1; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["sweep"] = json::array(); })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["trials"] = 0; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["trials"] = -2; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["seed"] = "one"; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["sweep"] = {"a"}; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["network"]["activation"] = "sine"; })),
                  ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d["train"]["momentum"] = 1.5; })), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(broken([](json& d) { d.erase("experiment"); })), ConfigError);

  json reg = smoke("regression_frequency");
  reg["sweep"] = {0.5};
  CHECK_THROWS_AS(experiment_config_from_json(reg), ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "curvlab_bad_config.json";
  {
    std::ofstream out(path);
    out << "{\"experiment\": ";
  }
  CHECK_THROWS_AS(load_experiment_config(path), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic datasets are reproducible") {
  DatasetSpec spec;
  spec.size = 40;
  spec.dim = 3;
  spec.holdout = 0.25;
  spec.seed = 4;
  const SyntheticDataset a = make_dataset(spec);
  const SyntheticDataset b = make_dataset(spec);
  CHECK(a.x == b.x);
  CHECK(a.x.cols() == 30);
  CHECK(a.x_test.cols() == 10);
  CHECK(a.labels.size() == 30);
  for (std::size_t j = 0; j < 30; ++j) CHECK(a.labels[j] == j % 4);
  CHECK(a.y.rows() == 4);
  spec.seed = 5;
  CHECK_FALSE(make_dataset(spec).x == a.x);

  DatasetSpec reg;
  reg.name = "regression-points";
  reg.size = 8;
  const SyntheticDataset r = make_dataset(reg);
  CHECK(r.x(0, 0) == -1.0);
  CHECK(r.x(0, 7) == 1.0);
  for (double v : r.y.data()) CHECK(std::abs(v) <= 1.0);

  DatasetSpec bad;
  bad.name = "cifar";
  CHECK_THROWS_AS(make_dataset(bad), ConfigError);
}

TEST_CASE("mean and sample standard deviation") {
  const MeanStd ms = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(ms.mean == 2.5);
  CHECK(ms.std == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(mean_std({7.0}).std == 0.0);
  CHECK_THROWS(mean_std({}));
}

TEST_CASE("label smoothing sweep schema and summaries") {
  const ExperimentConfig cfg = experiment_config_from_json(smoke("label_smoothing"));
  const CsvTable t = rendered(cfg);
  CHECK(t.comments.size() == 3);
  CHECK(t.header == std::vector<std::string>{"kind", "alpha", "trial", "step", "loss", "sharpness", "jacobian_max"});
  const auto traces = rows_of(t, "trace");
  CHECK_FALSE(traces.empty());
  for (const auto& r : traces) {
    CHECK_FALSE(r[5].empty());
    CHECK_FALSE(r[6].empty());
  }
  CHECK(rows_of(t, "final_mean").size() == 3);
  CHECK(rows_of(t, "peak_std").size() == 3);
  check_trace_summaries(t);
}

TEST_CASE("diverging sweep points are recorded as failed") {
  json doc = smoke("label_smoothing");
  doc["train"]["learning_rate"] = 1e9;
  doc["options"].erase("accuracy_target");
  const CsvTable t = rendered(experiment_config_from_json(doc));
  CHECK(rows_of(t, "failed").size() == 6);
  CHECK(rows_of(t, "trace").empty());
  for (const auto& r : rows_of(t, "final_mean")) CHECK(r[4].empty());
}

TEST_CASE("input scaling feature norms match a dense oracle") {
  json doc = smoke("input_scaling");
  doc["metrics"]["probe_size"] = 0;
  const ExperimentConfig cfg = experiment_config_from_json(doc);
  const CsvTable t = rendered(cfg);
  check_trace_summaries(t);
  const SyntheticDataset data = make_dataset(cfg.dataset);
  const std::size_t f1 = column_index(t, "feature_norm_1");
  CHECK(t.header.size() == f1 + 3);
  for (const auto& r : rows_of(t, "trace")) {
    if (r[3] != "0") continue;
    const double s = std::stod(r[1]);
    LayeredNetwork net = make_mlp(data.x.rows(), cfg.network.hidden, data.classes, cfg.network.activation);
    net.initialize(derive_seed(cfg.seed, std::stoull(r[2])));
    const auto acts = layer_activations(net, s * data.x);
    // Block outputs: after each hidden activation, then the logits.
    const std::vector<std::size_t> ends{2, 4, 5};
    for (std::size_t b = 0; b < 3; ++b) {
      const double oracle = Eigen::JacobiSVD<Matrix>(to_matrix(acts[ends[b]])).singularValues()(0);
      CHECK(rel_err(std::stod(r[f1 + b]), oracle) < 1e-6);
    }
  }
}

TEST_CASE("linear least squares: scaling inputs by s scales the Jacobian by 1/s") {
  const Tensor x = random_tensor(Shape{3, 20}, 1);
  const Tensor y = random_tensor(Shape{2, 20}, 2);
  auto fitted_norm = [&](double s) {
    Matrix a(20, 4);
    for (Eigen::Index j = 0; j < 20; ++j) {
      for (Eigen::Index i = 0; i < 3; ++i) a(j, i) = s * x(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      a(j, 3) = 1.0;
    }
    const Matrix sol = a.colPivHouseholderQr().solve(to_matrix(y).transpose());
    LayeredNetwork net({Layer::linear(3, 2)});
    Tensor params(Shape{8});
    for (std::size_t o = 0; o < 2; ++o) {
      for (std::size_t i = 0; i < 3; ++i) params[o * 3 + i] = sol(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(o));
      params[6 + o] = sol(3, static_cast<Eigen::Index>(o));
    }
    net.set_params(params);
    return jacobian_norms(net, s * x, false, {1e-12, 10000, 0}).max;
  };
  const double base = fitted_norm(1.0);
  for (double s : {0.5, 1.5, 4.0}) CHECK(rel_err(fitted_norm(s), base / s) < 1e-8);
}

TEST_CASE("regression frequency table shape") {
  json doc = smoke("regression_frequency");
  doc["trials"] = 10;
  doc["network"]["hidden"] = {4, 4, 4};
  doc["options"] = {{"gaussian_steps", 5}, {"relu_steps", 5}, {"pretrain_steps", 5}};
  const CsvTable t = rendered(experiment_config_from_json(doc));
  CHECK(t.header == std::vector<std::string>{"kind", "activation", "init", "trial", "jacobian_max", "sharpness",
                                             "first_layer_norm", "final_loss"});
  const auto trials = rows_of(t, "trial");
  REQUIRE(trials.size() == 40);
  const auto means = rows_of(t, "summary_mean");
  REQUIRE(means.size() == 4);
  CHECK(rows_of(t, "summary_std").size() == 4);
  for (const auto& m : means) {
    for (std::size_t c = 4; c < 8; ++c) {
      std::vector<double> v;
      for (const auto& r : trials) {
        if (r[1] == m[1] && r[2] == m[2]) v.push_back(std::stod(r[c]));
      }
      REQUIRE(v.size() == 10);
      CHECK(rel_err(std::stod(m[c]), mean_std(v).mean, 1e-300) <= 1e-12);
    }
  }
  // Only the initial first-layer scale differs between the Gaussian cells.
  double high = 0.0, low = 0.0;
  for (const auto& m : means) {
    if (m[1] == "gaussian") (m[2] == "high-freq" ? high : low) = std::stod(m[6]);
  }
  CHECK(low < 0.2 * high);
}

TEST_CASE("weight decay sweep") {
  const ExperimentConfig cfg = experiment_config_from_json(smoke("weight_decay"));
  const CsvTable t = rendered(cfg);
  const std::size_t total = column_index(t, "frobenius_total");
  CHECK(column_index(t, "frobenius_2") + 1 == total);
  const auto finals = rows_of(t, "final");
  CHECK(finals.size() == cfg.sweep.size() * cfg.trials);
  for (const auto& r : finals) {
    const double train = std::stod(r[4]), test = std::stod(r[5]);
    CHECK(std::stod(r[6]) == doctest::Approx(test - train).epsilon(1e-12));
    double sq = 0.0;
    for (std::size_t c = 9; c < total; ++c) sq += std::stod(r[c]) * std::stod(r[c]);
    CHECK(std::stod(r[total]) == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
  }
  const auto means = rows_of(t, "final_mean");
  REQUIRE(means.size() == cfg.sweep.size());
  for (std::size_t k = 1; k < means.size(); ++k) CHECK(std::stod(means[k][total]) < std::stod(means[k - 1][total]));

  // Decay that dominates the gradient drives the parameters to zero.
  json doc = smoke("weight_decay");
  doc["sweep"] = {5.0};
  doc["trials"] = 1;
  doc["train"]["max_steps"] = 200;
  const CsvTable collapsed = rendered(experiment_config_from_json(doc));
  const auto last = rows_of(collapsed, "final").front();
  CHECK(std::stod(last[8]) < 1e-6);
  CHECK(std::stod(last[total]) < 1e-6);

  json no_holdout = smoke("weight_decay");
  no_holdout["dataset"]["holdout"] = 0.0;
  CHECK_THROWS_AS(run_experiment(experiment_config_from_json(no_holdout)), ConfigError);
}

TEST_CASE("bn check writes the gap sweep") {
  const ExperimentConfig cfg = experiment_config_from_json(smoke("bn_check"));
  const CsvTable t = rendered(cfg);
  CHECK(t.header == std::vector<std::string>{"N", "gap", "fitted_slope"});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0][2].empty());
  CHECK_FALSE(t.rows[2][2].empty());
  CHECK(std::stod(t.rows[2][1]) < std::stod(t.rows[0][1]));
}

TEST_CASE("bound evaluation grid") {
  json doc = smoke("bound_eval");
  doc["sweep"] = {1, 2, 4, 8, 16, 32};
  const ExperimentConfig cfg = experiment_config_from_json(doc);
  const CsvTable t = rendered(cfg);
  CHECK(t.header == std::vector<std::string>{"N", "eps", "delta", "max_jac", "jac_lip", "h", "sample_max_bound",
                                             "generalisation_bound", "coverage_empirical", "coverage_std_error"});
  const HProfile profile = make_h_profile(2);
  std::map<std::pair<std::string, std::string>, double> max_bounds;
  for (const auto& r : t.rows) {
    const double n = std::stod(r[0]), eps = std::stod(r[1]), delta = std::stod(r[2]);
    const double max_jac = std::stod(r[3]), lip = std::stod(r[4]);
    const double p = std::stod(r[6]);
    if (delta == 0.0) CHECK(p == 1.0);
    CHECK(rel_err(p, thm_sample_max_bound(n, delta, lip, profile), 1e-300) <= 1e-12);
    if (eps > 0.0 && delta > 0.0) {
      CHECK(rel_err(std::stod(r[7]), generalisation_bound(n, eps, delta, max_jac, lip, profile, 1.0, 1.0), 1e-300) <=
            1e-12);
    }
    // The empirical miss rate is an estimate of a probability the bound dominates.
    CHECK(std::stod(r[8]) <= p + 4.0 * std::stod(r[9]) + 0.05);
    max_bounds[{r[0], r[2]}] = p;
  }
  for (const auto& [key, p] : max_bounds) {
    const std::string doubled = std::to_string(2 * std::stoul(key.first));
    if (!max_bounds.count({doubled, key.second})) continue;
    CHECK(rel_err(max_bounds.at({doubled, key.second}), p * p, 1e-300) <= 1e-12);
  }
}

TEST_CASE("maximum and concentration inequality checks") {
  const ExperimentConfig cfg = experiment_config_from_json(smoke("max_ineq"));
  const CsvTable t = rendered(cfg);
  std::map<std::string, std::vector<std::vector<std::string>>> by_probe;
  for (const auto& r : t.rows) by_probe[r[0]].push_back(r);
  REQUIRE(by_probe.size() == 4);
  for (const auto& r : by_probe.at("constant")) {
    if (std::stod(r[1]) > 0.0) {
      CHECK(std::stod(r[2]) == 0.0);
      CHECK(std::stod(r[7]) == 0.0);
    }
  }
  for (const auto& r : by_probe.at("identity")) {
    // 1-D uniform identity is the equality case of the maximum inequality.
    CHECK(std::abs(std::stod(r[2]) - std::stod(r[3])) <= 4.0 * std::stod(r[4]) + 1e-12);
  }
  for (const auto& [probe, rows] : by_probe) {
    for (std::size_t k = 1; k < rows.size(); ++k) {
      CAPTURE(probe);
      CHECK(std::stod(rows[k][2]) <= std::stod(rows[k - 1][2]));
      CHECK(std::stod(rows[k][7]) <= std::stod(rows[k - 1][7]));
    }
  }
}

TEST_CASE("runs are pure functions of config and seed") {
  for (const char* name : {"label_smoothing", "input_scaling", "regression_frequency", "weight_decay", "bn_check",
                           "bound_eval", "max_ineq"}) {
    CAPTURE(name);
    const ExperimentConfig cfg = experiment_config_from_json(smoke(name));
    const std::string a = render_csv(cfg, run_experiment(cfg));
    CHECK(a == render_csv(cfg, run_experiment(cfg)));
    RunOptions threaded;
    threaded.threads = 3;
    CHECK(a == render_csv(cfg, run_experiment(cfg, threaded)));
    RunOptions reseeded;
    reseeded.seed = cfg.seed + 1;
    CHECK(a != render_csv(cfg, run_experiment(cfg, reseeded)));
  }
}

TEST_CASE("experiments are written under the output directory") {
  const ExperimentConfig cfg = experiment_config_from_json(smoke("bn_check"));
  const auto dir = std::filesystem::temp_directory_path() / "curvlab_harness_out";
  std::filesystem::remove_all(dir);
  const auto path = write_experiment(cfg, {}, dir);
  CHECK(path == dir / "bn_check.csv");
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == render_csv(cfg, run_experiment(cfg)));
  CHECK(text.find('\r') == std::string::npos);
  CHECK(text.rfind("# config-hash: ", 0) == 0);
  std::filesystem::remove_all(dir);
}
