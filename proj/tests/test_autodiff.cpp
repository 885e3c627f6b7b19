#include "doctest.h"

#include "curvlab/autodiff.hpp"
#include "curvlab/cost.hpp"
#include "curvlab/network.hpp"
#include "test_support.hpp"

using namespace curvlab;
using namespace curvlab::testing;

namespace {

auto norm_sq = [](auto& g, auto x) {
  (void)g;
  return ad::sum(ad::square(x));
};

// f(theta) = theta_1^2 theta_2
auto cubic = [](auto& g, auto x) {
  (void)g;
  auto a = ad::slice(x, 0, 1);
  auto b = ad::slice(x, 1, 1);
  return ad::sum(a * a * b);
};

// g(x) = (x1 x2, x1 + x2)
auto pair_map = [](auto& g, auto x) {
  (void)g;
  auto a = ad::slice(x, 0, 1);
  auto b = ad::slice(x, 1, 1);
  return ad::concat(std::vector{a * b, a + b});
};

}  // namespace

TEST_CASE("grad of simple programs") {
  CHECK(ad::grad(norm_sq, Tensor::vector({1, 2})) == Tensor::vector({2, 4}));
  CHECK(ad::grad(cubic, Tensor::vector({1, 1})) == Tensor::vector({2, 1}));
  auto constant = [](auto& g, auto x) {
    (void)x;
    return ad::sum(g.constant(Tensor::vector({3.0})));
  };
  // x does not reach the output: the gradient is zero, shaped like x.
  CHECK(ad::grad(constant, Tensor::vector({1, 2, 3})) == Tensor::vector({0, 0, 0}));
}

TEST_CASE("grad rejects non-scalar programs") {
  auto identity = [](auto& g, auto x) {
    (void)g;
    return x;
  };
  CHECK_THROWS_AS(ad::grad(identity, Tensor::vector({1, 2})), ShapeError);
}

TEST_CASE("non-finite intermediates raise") {
  auto bad = [](auto& g, auto x) {
    (void)g;
    return ad::sum(ad::log(x));
  };
  CHECK_THROWS_AS(ad::grad(bad, Tensor::vector({-1.0})), NonFiniteError);
}

TEST_CASE("vjp examples") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  auto linear = [&a](auto& g, auto x) { return ad::matmul(g.constant(a), x); };
  CHECK(ad::vjp(linear, Tensor::vector({5, 6}), Tensor::vector({1, 0})) == Tensor::vector({1, 2}));
  auto identity = [](auto& g, auto x) {
    (void)g;
    return x;
  };
  CHECK(ad::vjp(identity, Tensor::vector({5, 6}), Tensor::vector({7, 8})) == Tensor::vector({7, 8}));
  CHECK(ad::vjp(pair_map, Tensor::vector({2, 3}), Tensor::vector({1, 1})) == Tensor::vector({4, 3}));
  CHECK_THROWS_AS(ad::vjp(identity, Tensor::vector({5, 6}), Tensor::vector({1})), ShapeError);
}

TEST_CASE("jvp examples") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  auto linear = [&a](auto& g, auto x) { return ad::matmul(g.constant(a), x); };
  CHECK(ad::jvp(linear, Tensor::vector({5, 6}), Tensor::vector({1, 1})) == Tensor::vector({3, 7}));
  auto identity = [](auto& g, auto x) {
    (void)g;
    return x;
  };
  CHECK(ad::jvp(identity, Tensor::vector({5, 6}), Tensor::vector({7, 8})) == Tensor::vector({7, 8}));
  CHECK(ad::jvp(pair_map, Tensor::vector({2, 3}), Tensor::vector({1, 0})) == Tensor::vector({3, 1}));
  CHECK_THROWS_AS(ad::jvp(identity, Tensor::vector({5, 6}), Tensor::vector({1})), ShapeError);
}

TEST_CASE("hvp examples") {
  const Tensor v = Tensor::vector({0.3, -1.2, 2.0});
  CHECK(ad::hvp(norm_sq, Tensor::vector({1, 2, 3}), v) == 2.0 * v);
  CHECK(ad::hvp(cubic, Tensor::vector({1, 1}), Tensor::vector({1, 0})) == Tensor::vector({2, 2}));
}

TEST_CASE("hvp matches finite differences of grad on a 20-parameter MLP") {
  // 2 -> 4 -> 2 tanh MLP: 12 + 10 = 22 parameters.
  LayeredNetwork net = make_mlp(2, {4}, 2, LayerKind::kTanh);
  net.initialize(7);
  const Tensor x = random_tensor(Shape{2, 5}, 1);
  const Tensor y = random_tensor(Shape{2, 5}, 2);
  const CostSpec cost = CostSpec::square();
  auto loss_fn = [&](auto& g, auto theta) {
    (void)g;
    return loss_program(net, cost, theta, x, y);
  };
  const Tensor theta = net.params();
  const Tensor v = random_tensor(theta.shape(), 3);
  const double h = 1e-5;
  const Tensor fd = (1.0 / (2.0 * h)) * (ad::grad(loss_fn, theta + h * v) - ad::grad(loss_fn, theta - h * v));
  CHECK(rel_err(ad::hvp(loss_fn, theta, v), fd) < 1e-6);
}

TEST_CASE("vjp and jvp are adjoint for every primitive") {
  const Tensor x = random_tensor(Shape{3, 4}, 11, 0.8);
  const Tensor a = random_tensor(Shape{2, 3}, 12);
  const Tensor c = random_tensor(Shape{3, 4}, 13);
  const Tensor col = random_tensor(Shape{3}, 14);
  const Tensor positive = Tensor(Shape{3, 4}, std::vector<double>(12, 1.5));

  auto check = [&](auto program, const char* name) {
    CAPTURE(name);
    const Tensor out = ad::evaluate(program, x);
    const Tensor u = random_tensor(out.shape(), 21);
    const Tensor v = random_tensor(x.shape(), 22);
    const double lhs = dot(u, ad::jvp(program, x, v));
    const double rhs = dot(ad::vjp(program, x, u), v);
    CHECK(rel_err(lhs, rhs) < 1e-10);
  };
  check([&](auto& g, auto z) { return z + g.constant(c); }, "add");
  check([&](auto& g, auto z) { return g.constant(c) - z; }, "sub");
  check([&](auto& g, auto z) { return z * g.constant(c); }, "mul");
  check([&](auto& g, auto z) { (void)g; return z * z; }, "mul-self");
  check([&](auto& g, auto z) { (void)g; return ad::scale(z, -2.5); }, "scale");
  check([&](auto& g, auto z) { (void)g; return ad::add_scalar(z, 4.0); }, "add_scalar");
  check([&](auto& g, auto z) { return ad::matmul(g.constant(a), z); }, "matmul-left");
  check([&](auto& g, auto z) { return ad::matmul(z, g.constant(Tensor::vector({1, 2, 3, 4}))); }, "matmul-vec");
  check([&](auto& g, auto z) { return ad::add_column(z, g.constant(col)); }, "add_column");
  check([&](auto& g, auto z) { (void)g; return ad::add_column(z, ad::row_mean(z)); }, "add_column-self");
  check([&](auto& g, auto z) { (void)g; return ad::mul_column(z, ad::row_mean(z)); }, "mul_column");
  check([&](auto& g, auto z) { (void)g; return ad::row_mean(z); }, "row_mean");
  check([&](auto& g, auto z) { (void)g; return ad::sum(z); }, "sum");
  check([&](auto& g, auto z) { (void)g; return ad::slice(z, 3, 5); }, "slice");
  check([&](auto& g, auto z) { (void)g; return ad::reshape(z, Shape{4, 3}); }, "reshape");
  check([&](auto& g, auto z) { (void)g; return ad::concat(std::vector{z, ad::square(z)}); }, "concat");
  check([&](auto& g, auto z) { (void)g; return ad::relu(z); }, "relu");
  check([&](auto& g, auto z) { (void)g; return ad::tanh(z); }, "tanh");
  check([&](auto& g, auto z) { (void)g; return ad::gaussian(z); }, "gaussian");
  check([&](auto& g, auto z) { (void)g; return ad::smooth_leaky_relu(z); }, "smooth-leaky-relu");
  check([&](auto& g, auto z) { (void)g; return ad::exp(z); }, "exp");
  check([&](auto& g, auto z) { return ad::log(z * z + g.constant(positive)); }, "log");
  check([&](auto& g, auto z) { return ad::pow(z * z + g.constant(positive), -0.5); }, "pow");
  check([&](auto& g, auto z) { (void)g; return ad::softmax(z); }, "softmax");
  check([&](auto& g, auto z) { (void)g; return ad::log_softmax(z); }, "log_softmax");
}

TEST_CASE("hvp is symmetric") {
  LayeredNetwork net = make_mlp(3, {5, 4}, 3, LayerKind::kGaussian);
  net.initialize(3);
  const Tensor x = random_tensor(Shape{3, 6}, 4);
  const Tensor y = make_class_targets({0, 1, 2, 0, 1, 2}, 3, 0.1).y;
  const CostSpec cost = CostSpec::cross_entropy(0.1);
  auto f = [&](auto& g, auto theta) {
    (void)g;
    return loss_program(net, cost, theta, x, y);
  };
  const Tensor v = random_tensor(net.params().shape(), 5);
  const Tensor w = random_tensor(net.params().shape(), 6);
  CHECK(rel_err(dot(w, ad::hvp(f, net.params(), v)), dot(v, ad::hvp(f, net.params(), w))) < 1e-8);
}

TEST_CASE("repeated backward passes are bit-identical") {
  LayeredNetwork net = make_mlp(2, {3}, 2, LayerKind::kTanh, BnMode::kTrain);
  net.initialize(9);
  const Tensor x = random_tensor(Shape{2, 4}, 1);
  const Tensor y = random_tensor(Shape{2, 4}, 2);
  ad::Graph<double> g;
  const auto theta = g.leaf(net.params());
  const auto out = loss_program(net, CostSpec::square(), theta, x, y);
  const Tensor seed = Tensor::scalar(1.0);
  const Tensor first = g.backward(out, seed).of(theta);
  const Tensor second = g.backward(out, seed).of(theta);
  CHECK(first == second);
}

TEST_CASE("gaussian activation value and slope at zero are exact") {
  auto f = [](auto& g, auto x) {
    (void)g;
    return ad::gaussian(x);
  };
  CHECK(ad::evaluate(f, Tensor::vector({0.0}))[0] == 1.0);
  CHECK(ad::jvp(f, Tensor::vector({0.0}), Tensor::vector({1.0}))[0] == 0.0);
}
