#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "curvlab/network.hpp"
#include "curvlab/spectral.hpp"
#include "curvlab/tensor.hpp"
#include "json.hpp"

namespace curvlab {

enum class DistributionKind { kHypercube, kPushforward };

inline constexpr double kGeneratorSingularFloor = 1e-3;

// Uniform law on [0,1]^n, or its image under a generator network.
struct DistributionSpec {
  DistributionKind kind = DistributionKind::kHypercube;
  std::size_t latent_dim = 1;
  std::optional<LayeredNetwork> generator;
  // Estimated Lipschitz norm of the generator on the hypercube.
  double generator_lip = 1.0;
  double concentration_C = 1.0;

  std::size_t out_dim() const;

  static DistributionSpec hypercube(std::size_t n, double concentration_C = 1.0);
  // Validates the generator and estimates its Lipschitz norm when lip <= 0.
  static DistributionSpec pushforward(LayeredNetwork generator, double lip = 0.0,
                                      double concentration_C = 1.0, std::uint64_t seed = 0);
};

// Smallest singular value over all linear layers.
double min_weight_singular_value(const LayeredNetwork& net);
// Throws unless the network is an immersion surrogate: linear and
// smooth-leaky-relu layers only, non-shrinking widths, singular-value floor.
void check_generator(const LayeredNetwork& net);
// Random generator n -> widths... -> out_dim, redrawn until check_generator passes.
LayeredNetwork random_generator(std::size_t n, const std::vector<std::size_t>& hidden,
                                std::size_t out_dim, std::uint64_t seed);
// Largest difference quotient over `pairs` uniform latent pairs.
double estimate_generator_lipschitz(const LayeredNetwork& generator, std::size_t pairs,
                                    std::uint64_t seed);

// out_dim x N, i.i.d. columns.
Tensor sample(const DistributionSpec& dist, std::size_t n, std::uint64_t seed);

struct HProfile {
  std::size_t n = 1;
  double ball_const = 2.0;
  double scale = 1.0;
};

// pi^(n/2) / Gamma(n/2 + 1)
double unit_ball_volume(std::size_t n);
HProfile make_h_profile(std::size_t n, double scale = 1.0);
HProfile make_h_profile(const DistributionSpec& dist);
// min(1, 2^-n C_ball (t/s)^n)
double h_eval(const HProfile& profile, double t);

struct MonteCarloRate {
  double rate = 0.0;
  double bound = 0.0;
  double std_error = 0.0;
  std::size_t trials = 0;
  // Reference-sample estimate: sup |g| for the maximum inequality, E g for
  // concentration (its norm).
  double reference = 0.0;
  double lipschitz = 0.0;
};

struct MonteCarloOptions {
  std::size_t trials = 100000;
  std::size_t reference_size = 100000;
  std::size_t lipschitz_pairs = 10000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

// Fraction of draws with |g(x)| <= sup|g| - eps, against 1 - h(eps / L).
MonteCarloRate max_inequality_violation_rate(const DistributionSpec& dist, const VectorFunction& g,
                                             double eps, const MonteCarloOptions& opts);
// Fraction of draws with |g(x) - E g| >= eps, against 2 exp(-C eps^2 / L^2).
MonteCarloRate concentration_violation_rate(const DistributionSpec& dist, const VectorFunction& g,
                                            double eps, const MonteCarloOptions& opts);

struct CoverageOptions {
  std::size_t trials = 10000;
  std::size_t reference_size = 100000;
  // Half the pairs are at distance pair_radius, half are independent draws.
  std::size_t lipschitz_pairs = 10000;
  double pair_radius = 1e-3;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct JacobianReference {
  // max |Jf| over the reference sample.
  double sup = 0.0;
  // Lipschitz estimate of x -> Jf(x) on the support.
  double jac_lip = 0.0;
};

JacobianReference jacobian_reference(const DistributionSpec& dist, const LayeredNetwork& net,
                                     bool softmaxed, const CoverageOptions& opts);

// Fraction of independent N-samples whose max |Jf| is below ref.sup - eps,
// against (1 - h(eps / ref.jac_lip))^N.
MonteCarloRate sample_max_coverage(const DistributionSpec& dist, const LayeredNetwork& net,
                                   bool softmaxed, const JacobianReference& ref,
                                   std::size_t n_samples, double eps, const CoverageOptions& opts);

// (1 - h(eps / jac_lip))^N
double thm_sample_max_bound(double n_samples, double eps, double jac_lip, const HProfile& profile);

// 1 - (1 - h(delta / jac_lip))^N - 2 exp(-N C' eps^2 / (max_jac + delta)^2),
// C' = concentration_C / cost_lip, clamped below at 0.
double generalisation_bound(double n_samples, double eps, double delta, double max_jac,
                            double jac_lip, const HProfile& profile, double concentration_C,
                            double cost_lip);

// max(0, (|y1 - y2| - 2 eps) / |x1 - x2|)
double lipschitz_lower_bound(const Tensor& y1, const Tensor& y2, const Tensor& x1,
                             const Tensor& x2, double eps);

nlohmann::json distribution_to_json(const DistributionSpec& dist);
DistributionSpec distribution_from_json(const nlohmann::json& doc);

}  // namespace curvlab
