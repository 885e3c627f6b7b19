#include "curvlab/distributions.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "curvlab/parallel.hpp"
#include "curvlab/rng.hpp"

namespace curvlab {

std::size_t DistributionSpec::out_dim() const {
  return kind == DistributionKind::kPushforward ? generator->out_dim() : latent_dim;
}

DistributionSpec DistributionSpec::hypercube(std::size_t n, double concentration_C) {
  if (n == 0) throw std::invalid_argument("hypercube dimension must be >= 1");
  if (!(concentration_C > 0.0)) throw std::invalid_argument("concentration_C must be positive");
  DistributionSpec d;
  d.kind = DistributionKind::kHypercube;
  d.latent_dim = n;
  d.concentration_C = concentration_C;
  return d;
}

DistributionSpec DistributionSpec::pushforward(LayeredNetwork generator, double lip,
                                               double concentration_C, std::uint64_t seed) {
  check_generator(generator);
  if (!(concentration_C > 0.0)) throw std::invalid_argument("concentration_C must be positive");
  DistributionSpec d;
  d.kind = DistributionKind::kPushforward;
  d.latent_dim = generator.in_dim();
  d.generator_lip = lip > 0.0 ? lip : estimate_generator_lipschitz(generator, 10000, seed);
  d.generator = std::move(generator);
  d.concentration_C = concentration_C;
  return d;
}

double min_weight_singular_value(const LayeredNetwork& net) {
  double smallest = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (net.layer(l).kind != LayerKind::kLinear) continue;
    const Matrix w = to_matrix(net.weight(l));
    Eigen::JacobiSVD<Matrix> svd(w);
    smallest = std::min(smallest, svd.singularValues().minCoeff());
  }
  return smallest;
}

void check_generator(const LayeredNetwork& net) {
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const Layer& layer = net.layer(l);
    if (layer.kind != LayerKind::kLinear && layer.kind != LayerKind::kSmoothLeakyRelu) {
      throw std::invalid_argument("generator layer " + std::to_string(l) +
                                  " must be linear or smooth-leaky-relu");
    }
    if (layer.kind == LayerKind::kLinear && layer.out_dim < layer.in_dim) {
      throw std::invalid_argument("generator layer " + std::to_string(l) + " reduces dimension");
    }
  }
  const double smallest = min_weight_singular_value(net);
  if (smallest < kGeneratorSingularFloor) {
    throw std::invalid_argument("degenerate generator: smallest weight singular value " +
                                std::to_string(smallest));
  }
}

LayeredNetwork random_generator(std::size_t n, const std::vector<std::size_t>& hidden,
                                std::size_t out_dim, std::uint64_t seed) {
  LayeredNetwork net = make_mlp(n, hidden, out_dim, LayerKind::kSmoothLeakyRelu);
  for (std::uint64_t attempt = 0;; ++attempt) {
    net.initialize(derive_seed(seed, attempt));
    if (min_weight_singular_value(net) >= kGeneratorSingularFloor) break;
    if (attempt > 1000) throw std::runtime_error("could not draw a non-degenerate generator");
  }
  check_generator(net);
  return net;
}

namespace {

Tensor hypercube_sample(std::size_t n, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(Shape{n, count});
  // Column-major draw order so a prefix of columns is seed-stable.
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t i = 0; i < n; ++i) x(i, j) = uniform01(rng);
  }
  return x;
}

}  // namespace

double estimate_generator_lipschitz(const LayeredNetwork& generator, std::size_t pairs,
                                    std::uint64_t seed) {
  const std::size_t n = generator.in_dim();
  const Tensor a = hypercube_sample(n, pairs, derive_seed(seed, 0));
  const Tensor b = hypercube_sample(n, pairs, derive_seed(seed, 1));
  const Tensor fa = forward_batch(generator, a);
  const Tensor fb = forward_batch(generator, b);
  double best = 0.0;
  for (std::size_t j = 0; j < pairs; ++j) {
    const double dx = norm2(column(a, j) - column(b, j));
    if (dx == 0.0) continue;
    best = std::max(best, norm2(column(fa, j) - column(fb, j)) / dx);
  }
  return best;
}

Tensor sample(const DistributionSpec& dist, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample size must be >= 1");
  Tensor x = hypercube_sample(dist.latent_dim, n, seed);
  if (dist.kind == DistributionKind::kHypercube) return x;
  if (!dist.generator) throw std::invalid_argument("pushforward distribution has no generator");
  check_generator(*dist.generator);
  return forward_batch(*dist.generator, x);
}

double unit_ball_volume(std::size_t n) {
  const double half = 0.5 * static_cast<double>(n);
  return std::pow(std::numbers::pi, half) / std::tgamma(half + 1.0);
}

HProfile make_h_profile(std::size_t n, double scale) {
  if (n == 0) throw std::invalid_argument("h profile dimension must be >= 1");
  if (!(scale > 0.0)) throw std::invalid_argument("h profile scale must be positive");
  return {n, unit_ball_volume(n), scale};
}

HProfile make_h_profile(const DistributionSpec& dist) {
  return make_h_profile(dist.latent_dim,
                        dist.kind == DistributionKind::kPushforward ? dist.generator_lip : 1.0);
}

double h_eval(const HProfile& profile, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("h_eval needs t >= 0");
  const double n = static_cast<double>(profile.n);
  const double value = std::pow(2.0, -n) * profile.ball_const * std::pow(t / profile.scale, n);
  return std::min(1.0, value);
}

namespace {

constexpr std::size_t kChunks = 64;

std::vector<double> norms_of(const VectorFunction& g, const Tensor& x) {
  std::vector<double> out(x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) out[j] = norm2(g(column(x, j)));
  return out;
}

double reference_lipschitz(const VectorFunction& g, const Tensor& ref, std::size_t pairs) {
  double best = 0.0;
  const std::size_t count = std::min(pairs, ref.cols() / 2);
  for (std::size_t k = 0; k < count; ++k) {
    const Tensor a = column(ref, 2 * k);
    const Tensor b = column(ref, 2 * k + 1);
    const double dx = norm2(a - b);
    if (dx == 0.0) continue;
    best = std::max(best, norm2(g(a) - g(b)) / dx);
  }
  return best;
}

// Counts draws satisfying `hit` over a fixed chunk grid; the count is
// independent of the number of threads.
template <class Hit>
std::size_t count_hits(const DistributionSpec& dist, const MonteCarloOptions& opts, Hit&& hit) {
  std::vector<std::size_t> hits(kChunks, 0);
  parallel_for(kChunks, opts.threads, [&](std::size_t c) {
    const std::size_t size = opts.trials / kChunks + (c < opts.trials % kChunks ? 1 : 0);
    if (size == 0) return;
    const Tensor x = sample(dist, size, derive_seed(opts.seed, c + 1));
    std::size_t local = 0;
    for (std::size_t j = 0; j < size; ++j) local += hit(column(x, j)) ? 1 : 0;
    hits[c] = local;
  });
  std::size_t total = 0;
  for (auto h : hits) total += h;
  return total;
}

void finish(MonteCarloRate& r, std::size_t hits) {
  r.rate = static_cast<double>(hits) / static_cast<double>(r.trials);
  r.std_error = std::sqrt(r.rate * (1.0 - r.rate) / static_cast<double>(r.trials));
}

}  // namespace

MonteCarloRate max_inequality_violation_rate(const DistributionSpec& dist, const VectorFunction& g,
                                             double eps, const MonteCarloOptions& opts) {
  if (opts.trials == 0 || opts.reference_size < 2) throw std::invalid_argument("empty Monte Carlo");
  const Tensor ref = sample(dist, opts.reference_size, derive_seed(opts.seed, 0));
  const auto ref_norms = norms_of(g, ref);
  MonteCarloRate r;
  r.trials = opts.trials;
  r.reference = *std::max_element(ref_norms.begin(), ref_norms.end());
  r.lipschitz = reference_lipschitz(g, ref, opts.lipschitz_pairs);
  const double threshold = r.reference - eps;
  finish(r, count_hits(dist, opts, [&](const Tensor& x) { return norm2(g(x)) <= threshold; }));
  const double t = r.lipschitz > 0.0 ? eps / r.lipschitz : std::numeric_limits<double>::infinity();
  r.bound = 1.0 - h_eval(make_h_profile(dist), t);
  return r;
}

MonteCarloRate concentration_violation_rate(const DistributionSpec& dist, const VectorFunction& g,
                                            double eps, const MonteCarloOptions& opts) {
  if (opts.trials == 0 || opts.reference_size < 2) throw std::invalid_argument("empty Monte Carlo");
  const Tensor ref = sample(dist, opts.reference_size, derive_seed(opts.seed, 0));
  Tensor mean = g(column(ref, 0));
  for (std::size_t j = 1; j < ref.cols(); ++j) mean = mean + g(column(ref, j));
  mean = (1.0 / static_cast<double>(ref.cols())) * mean;
  MonteCarloRate r;
  r.trials = opts.trials;
  r.reference = norm2(mean);
  r.lipschitz = reference_lipschitz(g, ref, opts.lipschitz_pairs);
  finish(r, count_hits(dist, opts, [&](const Tensor& x) { return norm2(g(x) - mean) >= eps; }));
  r.bound = r.lipschitz > 0.0
                ? 2.0 * std::exp(-dist.concentration_C * eps * eps / (r.lipschitz * r.lipschitz))
                : 0.0;
  return r;
}

namespace {

Tensor map_latent(const DistributionSpec& dist, const Tensor& z) {
  return dist.kind == DistributionKind::kPushforward ? forward_batch(*dist.generator, z) : z;
}

}  // namespace

JacobianReference jacobian_reference(const DistributionSpec& dist, const LayeredNetwork& net,
                                     bool softmaxed, const CoverageOptions& opts) {
  if (opts.reference_size == 0) throw std::invalid_argument("empty reference sample");
  if (!(opts.pair_radius > 0.0) || opts.pair_radius >= 0.5) {
    throw std::invalid_argument("pair_radius must lie in (0, 0.5)");
  }
  JacobianReference ref;
  const Tensor x = sample(dist, opts.reference_size, derive_seed(opts.seed, 0));
  const auto norms = jacobian_norms_dense(net, x, softmaxed);
  ref.sup = *std::max_element(norms.begin(), norms.end());

  const std::size_t n = dist.latent_dim;
  const std::size_t near = opts.lipschitz_pairs / 2;
  const std::size_t far = opts.lipschitz_pairs - near;
  SamplePairs pairs;
  pairs.reserve(opts.lipschitz_pairs);
  if (near > 0) {
    // Centres in the shrunken cube so both ends stay in the support.
    Rng rng(derive_seed(opts.seed, 1));
    const double r = opts.pair_radius;
    Tensor a(Shape{n, near});
    Tensor b(Shape{n, near});
    for (std::size_t j = 0; j < near; ++j) {
      std::vector<double> dir(n);
      double len = 0.0;
      while (len == 0.0) {
        len = 0.0;
        for (auto& v : dir) {
          v = normal(rng);
          len += v * v;
        }
        len = std::sqrt(len);
      }
      for (std::size_t i = 0; i < n; ++i) {
        a(i, j) = uniform(rng, r, 1.0 - r);
        b(i, j) = a(i, j) + r * dir[i] / len;
      }
    }
    const Tensor fa = map_latent(dist, a);
    const Tensor fb = map_latent(dist, b);
    for (std::size_t j = 0; j < near; ++j) pairs.emplace_back(column(fa, j), column(fb, j));
  }
  if (far > 0) {
    const Tensor a = sample(dist, far, derive_seed(opts.seed, 2));
    const Tensor b = sample(dist, far, derive_seed(opts.seed, 3));
    for (std::size_t j = 0; j < far; ++j) {
      if (norm2(column(a, j) - column(b, j)) > 0.0) pairs.emplace_back(column(a, j), column(b, j));
    }
  }
  ref.jac_lip = pairs.empty() ? 0.0 : jacobian_lipschitz_estimate(net, pairs, softmaxed);
  return ref;
}

MonteCarloRate sample_max_coverage(const DistributionSpec& dist, const LayeredNetwork& net,
                                   bool softmaxed, const JacobianReference& ref,
                                   std::size_t n_samples, double eps, const CoverageOptions& opts) {
  if (opts.trials == 0 || n_samples == 0) throw std::invalid_argument("empty coverage run");
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be >= 0");
  const double threshold = ref.sup - eps;
  std::vector<std::size_t> hits(kChunks, 0);
  parallel_for(kChunks, opts.threads, [&](std::size_t c) {
    const std::size_t size = opts.trials / kChunks + (c < opts.trials % kChunks ? 1 : 0);
    if (size == 0) return;
    const Tensor x = sample(dist, size * n_samples, derive_seed(opts.seed, 100 + c));
    const auto norms = jacobian_norms_dense(net, x, softmaxed);
    std::size_t local = 0;
    for (std::size_t t = 0; t < size; ++t) {
      const auto first = norms.begin() + static_cast<std::ptrdiff_t>(t * n_samples);
      if (*std::max_element(first, first + static_cast<std::ptrdiff_t>(n_samples)) < threshold) ++local;
    }
    hits[c] = local;
  });
  std::size_t total = 0;
  for (auto h : hits) total += h;
  MonteCarloRate r;
  r.trials = opts.trials;
  r.reference = ref.sup;
  r.lipschitz = ref.jac_lip;
  finish(r, total);
  r.bound = ref.jac_lip > 0.0
                ? thm_sample_max_bound(static_cast<double>(n_samples), eps, ref.jac_lip, make_h_profile(dist))
                : 0.0;
  return r;
}

double thm_sample_max_bound(double n_samples, double eps, double jac_lip, const HProfile& profile) {
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be >= 0");
  if (!(jac_lip > 0.0)) throw std::invalid_argument("jac_lip must be positive");
  if (!(n_samples >= 0.0)) throw std::invalid_argument("sample count must be >= 0");
  return std::pow(1.0 - h_eval(profile, eps / jac_lip), n_samples);
}

double generalisation_bound(double n_samples, double eps, double delta, double max_jac,
                            double jac_lip, const HProfile& profile, double concentration_C,
                            double cost_lip) {
  if (!(eps > 0.0) || !(delta > 0.0) || !(jac_lip > 0.0) || !(concentration_C > 0.0) ||
      !(cost_lip > 0.0) || !(max_jac >= 0.0)) {
    throw std::invalid_argument("generalisation_bound arguments must be positive");
  }
  const double c_prime = concentration_C / cost_lip;
  const double denom = (max_jac + delta) * (max_jac + delta);
  const double value = 1.0 - thm_sample_max_bound(n_samples, delta, jac_lip, profile) -
                       2.0 * std::exp(-n_samples * c_prime * eps * eps / denom);
  return std::max(0.0, value);
}

double lipschitz_lower_bound(const Tensor& y1, const Tensor& y2, const Tensor& x1,
                             const Tensor& x2, double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be >= 0");
  if (x1.size() != x2.size() || y1.size() != y2.size()) throw ShapeError("lipschitz_lower_bound");
  const double dx = norm2(x1 - x2);
  if (dx == 0.0) throw std::invalid_argument("lipschitz_lower_bound: coincident inputs");
  return std::max(0.0, (norm2(y1 - y2) - 2.0 * eps) / dx);
}

nlohmann::json distribution_to_json(const DistributionSpec& dist) {
  nlohmann::json doc;
  if (dist.kind == DistributionKind::kPushforward) {
    doc = architecture_to_json(*dist.generator);
    doc["kind"] = "pushforward";
    doc["generator_lip"] = dist.generator_lip;
    doc["params"] = dist.generator->params().storage();
  } else {
    doc["kind"] = "hypercube";
  }
  doc["latent_dim"] = dist.latent_dim;
  doc["concentration_C"] = dist.concentration_C;
  return doc;
}

DistributionSpec distribution_from_json(const nlohmann::json& doc) {
  static const std::set<std::string> kKeys{"kind",          "latent_dim", "concentration_C",
                                           "generator_lip", "layers",     "params"};
  if (!doc.is_object()) throw ConfigError("distribution must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!kKeys.contains(key)) throw ConfigError("unknown distribution key '" + key + "'");
  }
  const std::string kind = doc.at("kind").get<std::string>();
  const double c = doc.value("concentration_C", 1.0);
  if (kind == "hypercube") {
    if (doc.contains("layers") || doc.contains("params") || doc.contains("generator_lip")) {
      throw ConfigError("hypercube distribution takes no generator");
    }
    return DistributionSpec::hypercube(doc.at("latent_dim").get<std::size_t>(), c);
  }
  if (kind != "pushforward") throw ConfigError("unknown distribution kind '" + kind + "'");
  LayeredNetwork gen = network_from_json({{"layers", doc.at("layers")}});
  gen.set_params(Tensor::vector(doc.at("params").get<std::vector<double>>()));
  if (doc.contains("latent_dim") && doc.at("latent_dim").get<std::size_t>() != gen.in_dim()) {
    throw ConfigError("latent_dim does not match generator input");
  }
  return DistributionSpec::pushforward(std::move(gen), doc.value("generator_lip", 0.0), c);
}

}  // namespace curvlab
