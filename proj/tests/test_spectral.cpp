#include "doctest.h"

#include <Eigen/SVD>
#include <cmath>

#include "curvlab/spectral.hpp"
#include "test_support.hpp"

using namespace curvlab;
using namespace curvlab::testing;

namespace {

PowerOptions tight(std::uint64_t seed = 0) {
  PowerOptions o;
  o.tol = 1e-12;
  o.max_iter = 20000;
  o.seed = seed;
  return o;
}

LayeredNetwork single_linear(const Tensor& w, const Tensor& b) {
  LayeredNetwork net({Layer::linear(w.cols(), w.rows())});
  Tensor theta(Shape{net.param_count()});
  std::copy(w.data().begin(), w.data().end(), theta.data().begin());
  std::copy(b.data().begin(), b.data().end(), theta.data().begin() + static_cast<std::ptrdiff_t>(w.size()));
  net.set_params(theta);
  return net;
}

Matrix random_symmetric(Eigen::Index n, std::uint64_t seed) {
  const Matrix a = to_matrix(random_tensor(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(n)}, seed));
  return 0.5 * (a + a.transpose());
}

double sigma_max(const Matrix& m) { return Eigen::JacobiSVD<Matrix>(m).singularValues()(0); }

ScalarFn loss_of_theta(const LayeredNetwork& net, const CostSpec& cost, const Tensor& x,
                       const Tensor& y) {
  return [net, cost, x, y](const Tensor& theta) {
    LayeredNetwork copy = net;
    copy.set_params(theta);
    return loss(copy, cost, x, y);
  };
}

}  // namespace

TEST_CASE("power iteration examples") {
  CHECK(power_iteration(dense_operator(Eigen::Vector2d(3, 1).asDiagonal()), tight()).value ==
        doctest::Approx(3.0).epsilon(1e-9));
  const SpectralResult r = power_iteration(dense_operator(Eigen::Vector2d(-5, 2).asDiagonal()), tight());
  CHECK(r.value == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(r.converged);

  const SpectralResult zero = power_iteration(dense_operator(Matrix::Zero(3, 3)));
  CHECK(zero.value == 0.0);
  CHECK(zero.converged);

  CHECK_THROWS_AS(power_iteration(dense_operator(Matrix::Ones(2, 3))), std::invalid_argument);
}

TEST_CASE("power iteration matches a dense eigensolver") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix a = random_symmetric(8, seed);
    CAPTURE(seed);
    const SpectralResult r = power_iteration(dense_operator(a), tight(seed));
    CHECK(r.converged);
    CHECK(r.residual <= 1e-12);
    CHECK(rel_err(r.value, top_eigenvalue(a)) < 1e-6);
  }
}

TEST_CASE("non-convergence is reported with the best estimate") {
  PowerOptions o;
  o.max_iter = 2;
  o.tol = 1e-14;
  const SpectralResult r = power_iteration(dense_operator(random_symmetric(8, 3)), o);
  CHECK_FALSE(r.converged);
  CHECK(std::isfinite(r.value));
}

TEST_CASE("singular norm examples") {
  Matrix a(2, 2);
  a << 0, 2, 0, 0;
  CHECK(singular_norm(dense_operator(a), tight()).value == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(singular_norm(dense_operator(Matrix::Identity(4, 4)), tight()).value ==
        doctest::Approx(1.0).epsilon(1e-12));
  const Matrix b = to_matrix(random_tensor(Shape{5, 7}, 4));
  CHECK(rel_err(singular_norm(dense_operator(b), tight()).value, sigma_max(b)) < 1e-6);
}

TEST_CASE("sharpness of a one-parameter square loss") {
  // l(w) = (w * 1 - 0)^2
  auto l = [](auto& g, auto w) {
    (void)g;
    return ad::sum(ad::square(w));
  };
  CHECK(power_iteration(hessian_operator(l, Tensor::vector({0.7})), tight()).value ==
        doctest::Approx(2.0).epsilon(1e-12));

  // With a bias the model is w x + b; at x = 1 the Hessian is [[2,2],[2,2]].
  const auto net = single_linear(Tensor::matrix({{0.3}}), Tensor::vector({-0.1}));
  const Tensor x = Tensor::matrix({{1}});
  const Tensor y = Tensor::matrix({{0}});
  CHECK(sharpness(net, CostSpec::square(), x, y, tight()).value == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("scaling the loss scales the sharpness") {
  LayeredNetwork net = make_mlp(2, {4}, 1, LayerKind::kTanh);
  net.initialize(2);
  const Tensor x = random_tensor(Shape{2, 6}, 3);
  const Tensor y = random_tensor(Shape{1, 6}, 4);
  const CostSpec cost = CostSpec::square();
  const double base = sharpness(net, cost, x, y, tight()).value;
  for (double k : {0.5, 3.0}) {
    auto scaled = [&](auto& g, auto th) {
      (void)g;
      return ad::scale(loss_program(net, cost, th, x, y), k);
    };
    CHECK(rel_err(power_iteration(hessian_operator(scaled, net.params()), tight()).value, k * base) < 1e-8);
  }
}

TEST_CASE("sharpness matches a finite-difference Hessian") {
  // 2 -> 3 -> 4 -> 1 tanh: 9 + 16 + 5 = 30 parameters.
  LayeredNetwork net = make_mlp(2, {3, 4}, 1, LayerKind::kTanh);
  REQUIRE(net.param_count() == 30);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CAPTURE(seed);
    net.initialize(seed * 10);
    const Tensor x = random_tensor(Shape{2, 8}, seed + 100);
    const Tensor y = random_tensor(Shape{1, 8}, seed + 200);
    const CostSpec cost = CostSpec::square();
    const Matrix h = fd_hessian(loss_of_theta(net, cost, x, y), net.params());
    CHECK(rel_err(sharpness(net, cost, x, y, tight(seed)).value, top_eigenvalue(h)) < 1e-4);
  }
}

TEST_CASE("Gauss-Newton norm of the linear model") {
  const auto net = single_linear(Tensor::matrix({{0.3}}), Tensor::vector({-0.1}));
  const Tensor x = Tensor::matrix({{1}});
  const Tensor y = Tensor::matrix({{0}});
  // J = [x, 1] = [1, 1], D^2 gamma = 2: GN = 2 J^T J with norm 4.
  for (auto mode : {GaussNewtonMode::kPrimal, GaussNewtonMode::kConjugate}) {
    CHECK(gauss_newton_norm(net, CostSpec::square(), x, y, mode, tight()).value ==
          doctest::Approx(4.0).epsilon(1e-12));
  }
  // On a linear model the Hessian is the Gauss-Newton matrix.
  CHECK(sharpness(net, CostSpec::square(), x, y, tight()).value ==
        doctest::Approx(gauss_newton_norm(net, CostSpec::square(), x, y, GaussNewtonMode::kPrimal, tight()).value));
}

TEST_CASE("primal and conjugate Gauss-Newton norms agree with the dense oracle") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    CAPTURE(seed);
    LayeredNetwork net = make_mlp(3, {4, 4, 3}, 3, LayerKind::kTanh);
    net.initialize(seed);
    const Tensor x = random_tensor(Shape{3, 5}, seed + 10);
    const std::vector<std::size_t> labels{0, 1, 2, 1, 0};
    const CostSpec cost = seed == 2 ? CostSpec::square() : CostSpec::cross_entropy(0.1);
    const Tensor y = seed == 2 ? random_tensor(Shape{3, 5}, 4) : make_class_targets(labels, 3, 0.1).y;

    const double primal = gauss_newton_norm(net, cost, x, y, GaussNewtonMode::kPrimal, tight(seed)).value;
    const double conj = gauss_newton_norm(net, cost, x, y, GaussNewtonMode::kConjugate, tight(seed)).value;
    CHECK(rel_err(primal, conj) < 1e-6);

    const Matrix j = parameter_jacobian(net, x).to_dense();
    const Matrix c = cost_hessian_factor(cost, forward_batch(net, x), y).to_dense();
    CHECK(rel_err(primal, top_eigenvalue(j.transpose() * c * c * j)) < 1e-6);
  }
}

TEST_CASE("Gauss-Newton norm decays at a saturated cross-entropy optimum") {
  const Tensor x = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor y = make_class_targets({0, 1}, 2, 0.0).y;
  double previous = INFINITY;
  for (double s : {1.0, 5.0, 20.0, 50.0}) {
    const auto net = single_linear(Tensor::matrix({{s, -s}, {-s, s}}), Tensor::vector({0, 0}));
    const double gn =
        gauss_newton_norm(net, CostSpec::cross_entropy(), x, y, GaussNewtonMode::kConjugate, tight()).value;
    CAPTURE(s);
    CHECK(gn < previous);
    previous = gn;
  }
  CHECK(previous < 1e-30);
}

TEST_CASE("residual term examples") {
  const auto lin = single_linear(random_tensor(Shape{2, 3}, 1), random_tensor(Shape{2}, 2));
  const Tensor x = random_tensor(Shape{3, 4}, 3);
  const Tensor y = random_tensor(Shape{2, 4}, 4);
  CHECK(residual_term_norm(lin, CostSpec::square(), x, y).value == 0.0);

  LayeredNetwork net = make_mlp(3, {5}, 2, LayerKind::kTanh);
  net.initialize(5);
  const Tensor exact = forward_batch(net, x);
  CHECK(residual_term_norm(net, CostSpec::square(), x, exact).value == 0.0);
  CHECK(residual_term_norm(net, CostSpec::square(), x, y).value > 0.0);
}

TEST_CASE("Hessian splits into Gauss-Newton plus residual") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    CAPTURE(seed);
    LayeredNetwork net = make_mlp(3, {6, 4}, 3, seed % 2 ? LayerKind::kTanh : LayerKind::kGaussian);
    net.initialize(seed);
    const Tensor x = random_tensor(Shape{3, 7}, seed + 1);
    const bool ce = seed > 2;
    const CostSpec cost = ce ? CostSpec::cross_entropy(0.2) : CostSpec::square();
    const Tensor y = ce ? make_class_targets({0, 1, 2, 0, 1, 2, 0}, 3, 0.2).y : random_tensor(Shape{3, 7}, 9);
    const auto h = loss_hessian(net, cost, x, y);
    const auto gn = gauss_newton(net, cost, x, y);
    const auto res = residual_term(net, cost, x, y);
    for (std::uint64_t probe = 0; probe < 3; ++probe) {
      const Vector v = to_vector(random_tensor(Shape{net.param_count()}, 50 + probe));
      const Vector hv = h(v);
      CHECK((gn(v) + res(v) - hv).cwiseAbs().maxCoeff() / hv.cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("sharpness lies within Gauss-Newton norm plus or minus residual norm") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    CAPTURE(seed);
    LayeredNetwork net = make_mlp(2, {5}, 2, LayerKind::kTanh);
    net.initialize(seed);
    const Tensor x = random_tensor(Shape{2, 6}, seed + 20);
    const Tensor y = random_tensor(Shape{2, 6}, seed + 30, 3.0);
    const CostSpec cost = CostSpec::square();
    const double s = sharpness(net, cost, x, y, tight(seed)).value;
    const double g = gauss_newton_norm(net, cost, x, y, GaussNewtonMode::kPrimal, tight(seed)).value;
    const double r = residual_term_norm(net, cost, x, y, tight(seed)).value;
    CHECK(s >= g - r - 1e-8);
    CHECK(s <= g + r + 1e-8);
  }
}

TEST_CASE("Jacobian norms of a linear model equal the weight spectral norm") {
  const Tensor w = random_tensor(Shape{2, 3}, 7);
  const auto net = single_linear(w, random_tensor(Shape{2}, 8));
  const JacobianNorms r = jacobian_norms(net, random_tensor(Shape{3, 5}, 9), false, tight());
  REQUIRE(r.norms.size() == 5);
  CHECK(r.converged);
  for (double n : r.norms) CHECK(rel_err(n, sigma_max(to_matrix(w))) < 1e-9);
}

TEST_CASE("relu Jacobian vanishes in the dead region") {
  LayeredNetwork net = make_mlp(2, {3}, 2, LayerKind::kRelu);
  net.initialize(1);
  Tensor theta = net.params();
  const std::size_t bias0 = net.param_offset(0) + 6;
  for (std::size_t k = 0; k < 3; ++k) theta[bias0 + k] = -100.0;
  net.set_params(theta);
  const JacobianNorms r = jacobian_norms(net, random_tensor(Shape{2, 4}, 2), false);
  for (double n : r.norms) CHECK(n == 0.0);
  CHECK(r.max == 0.0);
  CHECK(r.argmax == 0);
}

TEST_CASE("per-sample Jacobian norms match finite-difference SVDs") {
  for (bool softmaxed : {false, true}) {
    CAPTURE(softmaxed);
    LayeredNetwork net = make_mlp(3, {5}, 4, LayerKind::kTanh);
    net.initialize(3);
    const Tensor x = random_tensor(Shape{3, 3}, 4);
    const JacobianNorms r = jacobian_norms(net, x, softmaxed, tight());
    std::size_t best = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      const std::vector<std::size_t> one{j};
      const Tensor col = select_columns(x, one).reshaped(Shape{3});
      const Matrix fd = fd_jacobian([&](const Tensor& z) { return forward_single(net, z, softmaxed); }, col);
      const double oracle = sigma_max(fd);
      CHECK(rel_err(r.norms[j], oracle) < 1e-6);
      CHECK(rel_err(jacobian_norms_dense(net, x, softmaxed)[j], oracle) < 1e-8);
      CHECK(rel_err(sigma_max(dense_jacobian(net, col, softmaxed)), oracle) < 1e-8);
      if (r.norms[j] > r.norms[best]) best = j;
    }
    CHECK(r.argmax == best);
    CHECK(r.max == r.norms[best]);
  }
}

TEST_CASE("batch Jacobian maximum is permutation invariant") {
  LayeredNetwork net = make_mlp(2, {6}, 3, LayerKind::kGaussian, BnMode::kEval);
  net.initialize(5);
  net.set_bn_mode(BnMode::kTrain);
  net.freeze_bn_statistics(random_tensor(Shape{2, 10}, 6));
  net.set_bn_mode(BnMode::kEval);
  const Tensor x = random_tensor(Shape{2, 7}, 7);
  const JacobianNorms a = jacobian_norms(net, x, true, tight());
  const std::vector<std::size_t> perm{3, 6, 0, 5, 1, 4, 2};
  const JacobianNorms b = jacobian_norms(net, select_columns(x, perm), true, tight());
  CHECK(rel_err(a.max, b.max) < 1e-8);
  CHECK(perm[b.argmax] == a.argmax);
}

TEST_CASE("train-mode batch norm is rejected by jacobian_norms") {
  LayeredNetwork net = make_mlp(2, {3}, 1, LayerKind::kTanh, BnMode::kTrain);
  net.initialize(1);
  CHECK_THROWS_AS(jacobian_norms(net, random_tensor(Shape{2, 4}, 1), false), std::invalid_argument);
}

TEST_CASE("empirical Lipschitz examples") {
  SamplePairs pairs;
  for (std::uint64_t k = 0; k < 5; ++k) {
    pairs.emplace_back(random_tensor(Shape{3}, 2 * k), random_tensor(Shape{3}, 2 * k + 1));
  }
  auto identity = [](const Tensor& x) { return x; };
  auto twice = [](const Tensor& x) { return 2.0 * x; };
  CHECK(empirical_lipschitz(identity, pairs) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(empirical_lipschitz(twice, pairs) == doctest::Approx(2.0).epsilon(1e-14));

  pairs.emplace_back(Tensor::vector({1, 1, 1}), Tensor::vector({1, 1, 1}));
  CHECK_THROWS_AS(empirical_lipschitz(identity, pairs), std::invalid_argument);
}

TEST_CASE("empirical Lipschitz is bounded by the Jacobian maximum on an interval") {
  LayeredNetwork net = make_mlp(1, {8}, 1, LayerKind::kTanh);
  net.initialize(4);
  const std::size_t n = 2001;
  Tensor grid(Shape{1, n});
  for (std::size_t i = 0; i < n; ++i) grid(0, i) = -2.0 + 4.0 * static_cast<double>(i) / (n - 1);
  SamplePairs pairs;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    pairs.emplace_back(Tensor::vector({grid(0, i)}), Tensor::vector({grid(0, i + 1)}));
  }
  const double lip = empirical_lipschitz(net, pairs, false);
  const double jac = jacobian_norms(net, grid, false, tight()).max;
  const double h = 4.0 / (n - 1);
  CHECK(lip <= jac + 10.0 * h);
  CHECK(lip >= jac - 10.0 * h);
}

TEST_CASE("Jacobian Lipschitz estimate examples") {
  SamplePairs pairs;
  for (double a = -2.0; a < 2.0; a += 0.25) pairs.emplace_back(Tensor::vector({a}), Tensor::vector({a + 0.1}));

  const auto lin = single_linear(Tensor::matrix({{1.5}}), Tensor::vector({0.2}));
  CHECK(jacobian_lipschitz_estimate(lin, pairs, false) == 0.0);

  // f(x) = x^2 / 2 has Jf(x) = x.
  auto half_square = [](const Tensor& x) {
    Matrix j(1, 1);
    j(0, 0) = x[0];
    return j;
  };
  CHECK(jacobian_lipschitz_estimate(half_square, pairs) == doctest::Approx(1.0).epsilon(1e-12));

  LayeredNetwork neuron({Layer::activation(LayerKind::kTanh, 1)});
  SamplePairs fine;
  for (int i = 0; i < 3000; ++i) {
    const double a = -3.0 + 6.0 * i / 3000.0;
    fine.emplace_back(Tensor::vector({a}), Tensor::vector({a + 6.0 / 3000.0}));
  }
  const double est = jacobian_lipschitz_estimate(neuron, fine, false);
  CHECK(est <= 4.0 / (3.0 * std::sqrt(3.0)));
  CHECK(est >= 0.76);
}
