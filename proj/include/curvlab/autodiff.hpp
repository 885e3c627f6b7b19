#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A program is any generic callable `(Graph<S>&, Var<S>) -> Var<S>` written
// against the free functions below. The same program is traced with
// S = double for values, gradients and vector-Jacobian products, and with
// S = Dual for Jacobian-vector products and (forward-over-reverse)
// Hessian-vector products. Primal values are cached on the tape, so a
// backward sweep never re-executes a primitive.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "curvlab/dual.hpp"
#include "curvlab/errors.hpp"
#include "curvlab/tensor.hpp"

namespace curvlab::ad {

enum class OpKind {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kMatmul,
  kAddColumn,
  kMulColumn,
  kRowMean,
  kSum,
  kSlice,
  kConcat,
  kReshape,
  kUnary,
  kSoftmax,
  kLogSoftmax,
};

enum class UnaryFn {
  kRelu,
  kTanh,
  kGaussian,         // exp(-x^2 / 2)
  kSmoothLeakyRelu,  // a x + (1 - a) (x + sqrt(x^2 + eps)) / 2
  kExp,
  kLog,
  kSquare,
  kPow,
};

inline constexpr double kSlrAlpha = 0.2;
inline constexpr double kSlrEps = 1e-2;

const char* op_name(OpKind kind);

template <class S>
class Graph;

template <class S>
struct Var {
  Graph<S>* graph = nullptr;
  std::size_t id = 0;

  const BasicTensor<S>& value() const { return graph->node(id).value; }
  const Shape& shape() const { return value().shape(); }
};

template <class S>
struct Node {
  OpKind kind = OpKind::kConstant;
  std::vector<std::size_t> inputs;
  BasicTensor<S> value;
  bool needs_grad = false;
  UnaryFn fn = UnaryFn::kRelu;
  double param = 0.0;
  std::size_t offset = 0;
};

namespace detail {

inline bool finite(double x) { return std::isfinite(x); }
inline bool finite(const Dual& x) { return isfinite(x); }

template <class S>
BasicTensor<S> lift(const Tensor& t) {
  if constexpr (std::is_same_v<S, double>) {
    return t;
  } else {
    std::vector<S> data(t.data().begin(), t.data().end());
    return BasicTensor<S>(t.shape(), std::move(data));
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMat> as_matrix(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

// C (+)= op(A) * op(B) for row-major storage.
inline void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c, bool accumulate) {
  Eigen::Map<RowMat> cm(c.data().data(), static_cast<Eigen::Index>(c.rows()),
                        static_cast<Eigen::Index>(c.cols()));
  const auto am = as_matrix(a);
  const auto bm = as_matrix(b);
  if (!accumulate) cm.setZero();
  if (!ta && !tb) cm.noalias() += am * bm;
  if (ta && !tb) cm.noalias() += am.transpose() * bm;
  if (!ta && tb) cm.noalias() += am * bm.transpose();
  if (ta && tb) cm.noalias() += am.transpose() * bm.transpose();
}

inline void split(const BasicTensor<Dual>& t, Tensor& val, Tensor& tan) {
  val = Tensor(t.shape());
  tan = Tensor(t.shape());
  for (std::size_t k = 0; k < t.size(); ++k) {
    val[k] = t[k].val;
    tan[k] = t[k].tan;
  }
}

inline void gemm(const BasicTensor<Dual>& a, bool ta, const BasicTensor<Dual>& b, bool tb,
                 BasicTensor<Dual>& c, bool accumulate) {
  Tensor av, at, bv, bt;
  split(a, av, at);
  split(b, bv, bt);
  Tensor cv(c.shape()), ct(c.shape());
  gemm(av, ta, bv, tb, cv, false);
  gemm(at, ta, bv, tb, ct, false);
  gemm(av, ta, bt, tb, ct, true);
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (accumulate) {
      c[k] += Dual(cv[k], ct[k]);
    } else {
      c[k] = Dual(cv[k], ct[k]);
    }
  }
}

template <class S>
S unary_value(UnaryFn fn, double param, const S& x) {
  using std::exp;
  using std::log;
  using std::pow;
  using std::sqrt;
  using std::tanh;
  switch (fn) {
    case UnaryFn::kRelu:
      return primal(x) > 0.0 ? x : S(0.0);
    case UnaryFn::kTanh:
      return tanh(x);
    case UnaryFn::kGaussian:
      return exp(S(-0.5) * x * x);
    case UnaryFn::kSmoothLeakyRelu:
      return S(kSlrAlpha) * x + S(0.5 * (1.0 - kSlrAlpha)) * (x + sqrt(x * x + S(kSlrEps)));
    case UnaryFn::kExp:
      return exp(x);
    case UnaryFn::kLog:
      return log(x);
    case UnaryFn::kSquare:
      return x * x;
    case UnaryFn::kPow:
      return pow(x, param);
  }
  return x;
}

// f'(x), given input x and cached output y = f(x).
template <class S>
S unary_derivative(UnaryFn fn, double param, const S& x, const S& y) {
  using std::pow;
  using std::sqrt;
  switch (fn) {
    case UnaryFn::kRelu:
      return S(primal(x) > 0.0 ? 1.0 : 0.0);
    case UnaryFn::kTanh:
      return S(1.0) - y * y;
    case UnaryFn::kGaussian:
      return -(x * y);
    case UnaryFn::kSmoothLeakyRelu:
      return S(kSlrAlpha) + S(0.5 * (1.0 - kSlrAlpha)) * (S(1.0) + x / sqrt(x * x + S(kSlrEps)));
    case UnaryFn::kExp:
      return y;
    case UnaryFn::kLog:
      return S(1.0) / x;
    case UnaryFn::kSquare:
      return S(2.0) * x;
    case UnaryFn::kPow:
      return S(param) * pow(x, param - 1.0);
  }
  return S(0.0);
}

}  // namespace detail

// Reverse-sweep result: one adjoint per node that received one.
template <class S>
class Adjoints {
 public:
  explicit Adjoints(std::size_t n) : adj_(n), present_(n, false) {}

  bool has(Var<S> v) const { return present_[v.id]; }

  // Adjoint of v, or zeros shaped like v when v does not influence the output.
  BasicTensor<S> of(Var<S> v) const {
    if (present_[v.id]) return adj_[v.id];
    return BasicTensor<S>(v.shape());
  }

  BasicTensor<S>& slot(std::size_t id, const Shape& shape) {
    if (!present_[id]) {
      adj_[id] = BasicTensor<S>(shape);
      present_[id] = true;
    }
    return adj_[id];
  }
  bool present(std::size_t id) const { return present_[id]; }
  const BasicTensor<S>& at(std::size_t id) const { return adj_[id]; }

 private:
  std::vector<BasicTensor<S>> adj_;
  std::vector<bool> present_;
};

template <class S>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Differentiable input.
  Var<S> leaf(BasicTensor<S> value) {
    Node<S> n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    n.needs_grad = true;
    return push(std::move(n));
  }

  // Non-differentiable input (data, targets, frozen statistics).
  Var<S> constant(const Tensor& value) {
    Node<S> n;
    n.kind = OpKind::kConstant;
    n.value = detail::lift<S>(value);
    return push(std::move(n));
  }

  const Node<S>& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  Var<S> push(Node<S> n) {
    for (const auto& v : n.value.data()) {
      if (!detail::finite(v)) {
        throw NonFiniteError(std::string("non-finite value produced by ") + op_name(n.kind));
      }
    }
    for (std::size_t in : n.inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    nodes_.push_back(std::move(n));
    return Var<S>{this, nodes_.size() - 1};
  }

  Adjoints<S> backward(Var<S> out, const BasicTensor<S>& seed) const;

 private:
  std::vector<Node<S>> nodes_;
};

// ---- primitive constructors -------------------------------------------------

namespace detail {

template <class S>
Node<S> make_node(OpKind kind, std::vector<std::size_t> inputs, BasicTensor<S> value) {
  Node<S> n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  return n;
}

template <class S>
void require_same_graph(Var<S> a, Var<S> b) {
  if (a.graph != b.graph) throw std::invalid_argument("vars belong to different graphs");
}

}  // namespace detail

template <class S>
Var<S> operator+(Var<S> a, Var<S> b) {
  detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  BasicTensor<S> out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b.value()[k];
  return a.graph->push(detail::make_node(OpKind::kAdd, {a.id, b.id}, std::move(out)));
}

template <class S>
Var<S> operator-(Var<S> a, Var<S> b) {
  detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
  BasicTensor<S> out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b.value()[k];
  return a.graph->push(detail::make_node(OpKind::kSub, {a.id, b.id}, std::move(out)));
}

// Elementwise product.
template <class S>
Var<S> operator*(Var<S> a, Var<S> b) {
  detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  BasicTensor<S> out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b.value()[k];
  return a.graph->push(detail::make_node(OpKind::kMul, {a.id, b.id}, std::move(out)));
}

template <class S>
Var<S> scale(Var<S> a, double c) {
  BasicTensor<S> out = a.value();
  for (auto& v : out.storage()) v *= S(c);
  auto n = detail::make_node(OpKind::kScale, {a.id}, std::move(out));
  n.param = c;
  return a.graph->push(std::move(n));
}

template <class S>
Var<S> operator*(double c, Var<S> a) {
  return scale(a, c);
}

template <class S>
Var<S> add_scalar(Var<S> a, double c) {
  BasicTensor<S> out = a.value();
  for (auto& v : out.storage()) v += S(c);
  auto n = detail::make_node(OpKind::kAddScalar, {a.id}, std::move(out));
  n.param = c;
  return a.graph->push(std::move(n));
}

// Matrix product; rank-1 operands act as columns. A rank-1 right operand
// yields a rank-1 result.
template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require_same_graph(a, b);
  if (a.value().rank() != 2) throw ShapeError("matmul: left operand must be a matrix");
  if (a.value().cols() != b.value().rows()) {
    throw ShapeError("matmul: inner dimensions " + shape_string(a.shape()) + " * " +
                     shape_string(b.shape()));
  }
  Shape shape = b.value().rank() == 1 ? Shape{a.value().rows()}
                                       : Shape{a.value().rows(), b.value().cols()};
  BasicTensor<S> out(std::move(shape));
  detail::gemm(a.value(), false, b.value(), false, out, false);
  return a.graph->push(detail::make_node(OpKind::kMatmul, {a.id, b.id}, std::move(out)));
}

// A + b 1^T: adds the length-m vector b to every column of the m x n matrix A.
template <class S>
Var<S> add_column(Var<S> a, Var<S> b) {
  detail::require_same_graph(a, b);
  const auto& av = a.value();
  if (b.value().size() != av.rows()) throw ShapeError("add_column: length mismatch");
  BasicTensor<S> out = av;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += b.value()[i];
  }
  return a.graph->push(detail::make_node(OpKind::kAddColumn, {a.id, b.id}, std::move(out)));
}

// diag(s) A: scales row i of A by s_i.
template <class S>
Var<S> mul_column(Var<S> a, Var<S> s) {
  detail::require_same_graph(a, s);
  const auto& av = a.value();
  if (s.value().size() != av.rows()) throw ShapeError("mul_column: length mismatch");
  BasicTensor<S> out = av;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) *= s.value()[i];
  }
  return a.graph->push(detail::make_node(OpKind::kMulColumn, {a.id, s.id}, std::move(out)));
}

// Mean over the column index; returns a length-m vector.
template <class S>
Var<S> row_mean(Var<S> a) {
  const auto& av = a.value();
  BasicTensor<S> out(Shape{av.rows()});
  const double inv = 1.0 / static_cast<double>(av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    S acc(0.0);
    for (std::size_t j = 0; j < av.cols(); ++j) acc += av(i, j);
    out[i] = acc * S(inv);
  }
  return a.graph->push(detail::make_node(OpKind::kRowMean, {a.id}, std::move(out)));
}

template <class S>
Var<S> sum(Var<S> a) {
  S acc(0.0);
  for (const auto& v : a.value().data()) acc += v;
  return a.graph->push(detail::make_node(OpKind::kSum, {a.id}, BasicTensor<S>::scalar(acc)));
}

// Flat entries [offset, offset + count) as a rank-1 tensor.
template <class S>
Var<S> slice(Var<S> a, std::size_t offset, std::size_t count) {
  const auto& av = a.value();
  if (offset + count > av.size()) throw ShapeError("slice out of range");
  std::vector<S> data(av.data().begin() + static_cast<std::ptrdiff_t>(offset),
                      av.data().begin() + static_cast<std::ptrdiff_t>(offset + count));
  auto n = detail::make_node(OpKind::kSlice, {a.id}, BasicTensor<S>(Shape{count}, std::move(data)));
  n.offset = offset;
  return a.graph->push(std::move(n));
}

template <class S>
Var<S> reshape(Var<S> a, Shape shape) {
  if (shape_size(shape) != a.value().size()) throw ShapeError("reshape: size mismatch");
  return a.graph->push(
      detail::make_node(OpKind::kReshape, {a.id}, a.value().reshaped(std::move(shape))));
}

// Flat concatenation into a rank-1 tensor.
template <class S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<S> data;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::require_same_graph(parts.front(), p);
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    ids.push_back(p.id);
  }
  const std::size_t n = data.size();
  return parts.front().graph->push(
      detail::make_node(OpKind::kConcat, std::move(ids), BasicTensor<S>(Shape{n}, std::move(data))));
}

template <class S>
Var<S> unary(Var<S> a, UnaryFn fn, double param = 0.0) {
  BasicTensor<S> out = a.value();
  for (auto& v : out.storage()) v = detail::unary_value(fn, param, v);
  auto n = detail::make_node(OpKind::kUnary, {a.id}, std::move(out));
  n.fn = fn;
  n.param = param;
  return a.graph->push(std::move(n));
}

template <class S> Var<S> relu(Var<S> a) { return unary(a, UnaryFn::kRelu); }
template <class S> Var<S> tanh(Var<S> a) { return unary(a, UnaryFn::kTanh); }
template <class S> Var<S> gaussian(Var<S> a) { return unary(a, UnaryFn::kGaussian); }
template <class S> Var<S> smooth_leaky_relu(Var<S> a) { return unary(a, UnaryFn::kSmoothLeakyRelu); }
template <class S> Var<S> exp(Var<S> a) { return unary(a, UnaryFn::kExp); }
template <class S> Var<S> log(Var<S> a) { return unary(a, UnaryFn::kLog); }
template <class S> Var<S> square(Var<S> a) { return unary(a, UnaryFn::kSquare); }
template <class S> Var<S> pow(Var<S> a, double p) { return unary(a, UnaryFn::kPow, p); }

namespace detail {

template <class S>
BasicTensor<S> column_softmax(const BasicTensor<S>& z, bool log_space) {
  using std::exp;
  using std::log;
  BasicTensor<S> out(z.shape());
  const std::size_t rows = z.rows();
  const std::size_t cols = z.cols();
  for (std::size_t j = 0; j < cols; ++j) {
    double m = primal(z(0, j));
    for (std::size_t i = 1; i < rows; ++i) m = std::max(m, primal(z(i, j)));
    S denom(0.0);
    for (std::size_t i = 0; i < rows; ++i) denom += exp(z(i, j) - S(m));
    if (log_space) {
      const S log_denom = log(denom);
      for (std::size_t i = 0; i < rows; ++i) out(i, j) = z(i, j) - S(m) - log_denom;
    } else {
      for (std::size_t i = 0; i < rows; ++i) out(i, j) = exp(z(i, j) - S(m)) / denom;
    }
  }
  return out;
}

}  // namespace detail

// Softmax over each column (max-subtracted).
template <class S>
Var<S> softmax(Var<S> z) {
  return z.graph->push(
      detail::make_node(OpKind::kSoftmax, {z.id}, detail::column_softmax(z.value(), false)));
}

template <class S>
Var<S> log_softmax(Var<S> z) {
  return z.graph->push(
      detail::make_node(OpKind::kLogSoftmax, {z.id}, detail::column_softmax(z.value(), true)));
}

// ---- reverse sweep ----------------------------------------------------------

template <class S>
Adjoints<S> Graph<S>::backward(Var<S> out, const BasicTensor<S>& seed) const {
  if (out.graph != this) throw std::invalid_argument("backward: var from another graph");
  if (seed.shape() != out.shape()) {
    throw ShapeError("backward: seed shape " + shape_string(seed.shape()) +
                     " does not match output " + shape_string(out.shape()));
  }
  Adjoints<S> adj(nodes_.size());
  adj.slot(out.id, seed.shape()) = seed;

  for (std::size_t id = out.id + 1; id-- > 0;) {
    const Node<S>& n = nodes_[id];
    if (!n.needs_grad || !adj.present(id)) continue;
    const BasicTensor<S>& g = adj.at(id);
    auto target = [&](std::size_t k) -> BasicTensor<S>* {
      const std::size_t in = n.inputs[k];
      if (!nodes_[in].needs_grad) return nullptr;
      return &adj.slot(in, nodes_[in].value.shape());
    };

    switch (n.kind) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kAdd:
      case OpKind::kSub: {
        if (auto* ga = target(0)) {
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        }
        if (auto* gb = target(1)) {
          if (n.kind == OpKind::kAdd) {
            for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k] += g[k];
          } else {
            for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k] -= g[k];
          }
        }
        break;
      }
      case OpKind::kMul: {
        const auto& a = nodes_[n.inputs[0]].value;
        const auto& b = nodes_[n.inputs[1]].value;
        if (auto* ga = target(0)) {
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * b[k];
        }
        if (auto* gb = target(1)) {
          for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k] += g[k] * a[k];
        }
        break;
      }
      case OpKind::kScale: {
        if (auto* ga = target(0)) {
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += S(n.param) * g[k];
        }
        break;
      }
      case OpKind::kAddScalar:
      case OpKind::kReshape: {
        if (auto* ga = target(0)) {
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        }
        break;
      }
      case OpKind::kMatmul: {
        const auto& a = nodes_[n.inputs[0]].value;
        const auto& b = nodes_[n.inputs[1]].value;
        // Rank-1 results are n x 1 columns.
        const BasicTensor<S> g2 = g.reshaped(Shape{a.rows(), b.cols()});
        if (auto* ga = target(0)) detail::gemm(g2, false, b, true, *ga, true);
        if (auto* gb = target(1)) {
          BasicTensor<S> tmp(Shape{b.rows(), b.cols()});
          detail::gemm(a, true, g2, false, tmp, false);
          for (std::size_t k = 0; k < tmp.size(); ++k) (*gb)[k] += tmp[k];
        }
        break;
      }
      case OpKind::kAddColumn: {
        if (auto* ga = target(0)) {
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k];
        }
        if (auto* gb = target(1)) {
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) (*gb)[i] += g(i, j);
          }
        }
        break;
      }
      case OpKind::kMulColumn: {
        const auto& a = nodes_[n.inputs[0]].value;
        const auto& s = nodes_[n.inputs[1]].value;
        if (auto* ga = target(0)) {
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) (*ga)(i, j) += g(i, j) * s[i];
          }
        }
        if (auto* gs = target(1)) {
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) (*gs)[i] += g(i, j) * a(i, j);
          }
        }
        break;
      }
      case OpKind::kRowMean: {
        if (auto* ga = target(0)) {
          const S inv(1.0 / static_cast<double>(ga->cols()));
          for (std::size_t i = 0; i < ga->rows(); ++i) {
            for (std::size_t j = 0; j < ga->cols(); ++j) (*ga)(i, j) += g[i] * inv;
          }
        }
        break;
      }
      case OpKind::kSum: {
        if (auto* ga = target(0)) {
          for (auto& v : ga->storage()) v += g[0];
        }
        break;
      }
      case OpKind::kSlice: {
        if (auto* ga = target(0)) {
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[n.offset + k] += g[k];
        }
        break;
      }
      case OpKind::kConcat: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
          const std::size_t len = nodes_[n.inputs[p]].value.size();
          if (auto* gp = target(p)) {
            for (std::size_t k = 0; k < len; ++k) (*gp)[k] += g[off + k];
          }
          off += len;
        }
        break;
      }
      case OpKind::kUnary: {
        if (auto* ga = target(0)) {
          const auto& x = nodes_[n.inputs[0]].value;
          for (std::size_t k = 0; k < g.size(); ++k) {
            (*ga)[k] += g[k] * detail::unary_derivative(n.fn, n.param, x[k], n.value[k]);
          }
        }
        break;
      }
      case OpKind::kSoftmax: {
        if (auto* ga = target(0)) {
          const auto& p = n.value;
          for (std::size_t j = 0; j < p.cols(); ++j) {
            S s(0.0);
            for (std::size_t i = 0; i < p.rows(); ++i) s += g(i, j) * p(i, j);
            for (std::size_t i = 0; i < p.rows(); ++i) (*ga)(i, j) += p(i, j) * (g(i, j) - s);
          }
        }
        break;
      }
      case OpKind::kLogSoftmax: {
        if (auto* ga = target(0)) {
          using std::exp;
          const auto& l = n.value;
          for (std::size_t j = 0; j < l.cols(); ++j) {
            S s(0.0);
            for (std::size_t i = 0; i < l.rows(); ++i) s += g(i, j);
            for (std::size_t i = 0; i < l.rows(); ++i) (*ga)(i, j) += g(i, j) - exp(l(i, j)) * s;
          }
        }
        break;
      }
    }
  }
  return adj;
}

// ---- program-level transforms ----------------------------------------------

template <class Program>
Tensor evaluate(Program&& f, const Tensor& x) {
  Graph<double> g;
  return f(g, g.leaf(x)).value();
}

template <class Program>
std::pair<double, Tensor> value_and_grad(Program&& f, const Tensor& theta) {
  Graph<double> g;
  const auto in = g.leaf(theta);
  const auto out = f(g, in);
  if (out.value().size() != 1) {
    throw ShapeError("grad: program output " + shape_string(out.shape()) + " is not scalar");
  }
  const auto adj = g.backward(out, Tensor(out.shape(), {1.0}));
  Tensor grad = adj.of(in);
  require_finite(grad, "gradient");
  return {out.value()[0], std::move(grad)};
}

template <class Program>
Tensor grad(Program&& f, const Tensor& theta) {
  return value_and_grad(f, theta).second;
}

// u^T Jg(x), shaped like x.
template <class Program>
Tensor vjp(Program&& g, const Tensor& x, const Tensor& u) {
  Graph<double> graph;
  const auto in = graph.leaf(x);
  const auto out = g(graph, in);
  if (u.shape() != out.shape()) {
    throw ShapeError("vjp: cotangent shape " + shape_string(u.shape()) +
                     " does not match output " + shape_string(out.shape()));
  }
  return graph.backward(out, u).of(in);
}

// Jg(x) v, shaped like g(x).
template <class Program>
Tensor jvp(Program&& g, const Tensor& x, const Tensor& v) {
  if (v.shape() != x.shape()) {
    throw ShapeError("jvp: tangent shape " + shape_string(v.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  Graph<Dual> graph;
  std::vector<Dual> data(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) data[k] = Dual(x[k], v[k]);
  const auto out = g(graph, graph.leaf(BasicTensor<Dual>(x.shape(), std::move(data))));
  Tensor result(out.shape());
  for (std::size_t k = 0; k < result.size(); ++k) result[k] = out.value()[k].tan;
  return result;
}

// D^2 f(theta) v by differentiating the reverse sweep along v.
template <class Program>
Tensor hvp(Program&& f, const Tensor& theta, const Tensor& v) {
  if (v.shape() != theta.shape()) throw ShapeError("hvp: direction shape mismatch");
  Graph<Dual> graph;
  std::vector<Dual> data(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) data[k] = Dual(theta[k], v[k]);
  const auto in = graph.leaf(BasicTensor<Dual>(theta.shape(), std::move(data)));
  const auto out = f(graph, in);
  if (out.value().size() != 1) throw ShapeError("hvp: program output is not scalar");
  const auto adj = graph.backward(out, BasicTensor<Dual>(out.shape(), {Dual(1.0, 0.0)}));
  const auto g = adj.of(in);
  Tensor result(theta.shape());
  for (std::size_t k = 0; k < result.size(); ++k) result[k] = g[k].tan;
  require_finite(result, "Hessian-vector product");
  return result;
}

}  // namespace curvlab::ad
