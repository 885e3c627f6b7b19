#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "curvlab/errors.hpp"
#include "curvlab/harness.hpp"

namespace {

struct Invocation {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

}  // namespace

int main(int argc, char** argv) {
  using namespace curvlab;
  CLI::App app{"curvature and Jacobian experiment suite"};
  app.require_subcommand(1);
  Invocation inv;
  std::optional<ExperimentKind> chosen;
  for (ExperimentKind kind : all_experiment_kinds()) {
    auto* sub = app.add_subcommand(std::string(subcommand_name(kind)),
                                   "run a " + std::string(to_string(kind)) + " config");
    sub->add_option("--config", inv.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", inv.out, "output directory")->capture_default_str();
    sub->add_option("--seed", inv.seed, "override the config seed");
    sub->add_option("--threads", inv.threads, "worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
    sub->callback([&chosen, kind] { chosen = kind; });
  }
  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = load_experiment_config(inv.config);
    if (cfg.kind != *chosen) {
      throw ConfigError("config describes '" + std::string(to_string(cfg.kind)) + "', not '" +
                        std::string(to_string(*chosen)) + "'");
    }
    RunOptions opts;
    opts.seed = inv.seed;
    opts.threads = inv.threads;
    const auto path = write_experiment(cfg, opts, inv.out);
    std::cout << path.string() << '\n';
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
