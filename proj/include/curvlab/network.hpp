#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "curvlab/autodiff.hpp"
#include "curvlab/linear_operator.hpp"
#include "curvlab/tensor.hpp"
#include "json.hpp"

namespace curvlab {

enum class LayerKind { kLinear, kRelu, kTanh, kGaussian, kSmoothLeakyRelu, kBatchNorm, kSoftmax };
enum class BnMode { kTrain, kEval };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);
std::string_view to_string(BnMode mode);
BnMode parse_bn_mode(std::string_view name);

struct Layer {
  LayerKind kind = LayerKind::kLinear;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  BnMode bn_mode = BnMode::kTrain;
  double bn_eps = 1e-5;
  // Frozen statistics used by batch norm in eval mode.
  std::vector<double> running_mean;
  std::vector<double> running_var;

  std::size_t param_count() const;
  bool columnwise() const { return kind != LayerKind::kBatchNorm || bn_mode == BnMode::kEval; }

  static Layer linear(std::size_t in_dim, std::size_t out_dim);
  static Layer activation(LayerKind kind, std::size_t dim);
  static Layer batch_norm(std::size_t dim, BnMode mode, double eps = 1e-5);
};

// Ordered layers sharing one flat parameter vector theta = (theta_1, ..., theta_L).
// A linear layer stores its out x in weight matrix row-major, then its bias.
class LayeredNetwork {
 public:
  LayeredNetwork() = default;
  explicit LayeredNetwork(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }
  std::size_t depth() const { return layers_.size(); }
  std::size_t in_dim() const { return layers_.front().in_dim; }
  std::size_t out_dim() const { return layers_.back().out_dim; }

  const Tensor& params() const { return params_; }
  void set_params(Tensor params);
  std::size_t param_count() const { return params_.size(); }
  std::size_t param_offset(std::size_t l) const { return offsets_.at(l); }

  // Weight matrix (out x in) of a linear layer.
  Tensor weight(std::size_t l) const;
  Tensor bias(std::size_t l) const;
  void set_weight(std::size_t l, const Tensor& w);

  bool has_train_bn() const;
  void set_bn_mode(BnMode mode);
  // Stores the batch statistics of the incoming activations at every batch
  // norm layer as its eval-mode constants.
  void freeze_bn_statistics(const Tensor& x);

  // Uniform on +-1/sqrt(in_dim) for weights and biases of linear layers.
  void initialize(std::uint64_t seed);

 private:
  std::vector<Layer> layers_;
  std::vector<std::size_t> offsets_;
  Tensor params_;
};

// Multilayer perceptron: linear layers separated by `activation`, optional
// eval/train batch norm after each hidden linear layer.
LayeredNetwork make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                        std::size_t out_dim, LayerKind activation,
                        std::optional<BnMode> batch_norm = std::nullopt);

// ---- traced forward pass ----------------------------------------------------

template <class S>
ad::Var<S> apply_layer(const LayeredNetwork& net, std::size_t l, ad::Var<S> theta, ad::Var<S> a) {
  const Layer& layer = net.layer(l);
  if (a.value().rows() != layer.in_dim) {
    throw ShapeError("layer " + std::to_string(l) + " expects " + std::to_string(layer.in_dim) +
                     " input rows, got " + std::to_string(a.value().rows()));
  }
  switch (layer.kind) {
    case LayerKind::kLinear: {
      const std::size_t off = net.param_offset(l);
      const std::size_t nw = layer.out_dim * layer.in_dim;
      auto w = ad::reshape(ad::slice(theta, off, nw), Shape{layer.out_dim, layer.in_dim});
      auto b = ad::slice(theta, off + nw, layer.out_dim);
      return ad::add_column(ad::matmul(w, a), b);
    }
    case LayerKind::kRelu:
      return ad::relu(a);
    case LayerKind::kTanh:
      return ad::tanh(a);
    case LayerKind::kGaussian:
      return ad::gaussian(a);
    case LayerKind::kSmoothLeakyRelu:
      return ad::smooth_leaky_relu(a);
    case LayerKind::kSoftmax:
      return ad::softmax(a);
    case LayerKind::kBatchNorm: {
      auto& g = *a.graph;
      if (layer.bn_mode == BnMode::kEval) {
        Tensor neg_mean(Shape{layer.in_dim});
        Tensor inv_std(Shape{layer.in_dim});
        for (std::size_t i = 0; i < layer.in_dim; ++i) {
          neg_mean[i] = -layer.running_mean[i];
          inv_std[i] = 1.0 / std::sqrt(layer.bn_eps + layer.running_var[i]);
        }
        return ad::mul_column(ad::add_column(a, g.constant(neg_mean)), g.constant(inv_std));
      }
      if (a.value().cols() < 2) {
        throw std::invalid_argument("train-mode batch norm needs at least 2 columns");
      }
      auto centered = ad::add_column(a, ad::scale(ad::row_mean(a), -1.0));
      auto var = ad::row_mean(ad::square(centered));
      return ad::mul_column(centered, ad::pow(ad::add_scalar(var, layer.bn_eps), -0.5));
    }
  }
  return a;
}

// Layers [first, last) applied to a (d x N matrix or single d-vector).
template <class S>
ad::Var<S> forward_program(const LayeredNetwork& net, ad::Var<S> theta, ad::Var<S> a,
                           std::size_t first = 0, std::optional<std::size_t> last = std::nullopt) {
  const std::size_t end = last.value_or(net.depth());
  for (std::size_t l = first; l < end; ++l) a = apply_layer(net, l, theta, a);
  return a;
}

// f_L o ... o f_1 (X), d_L x N.
Tensor forward_batch(const LayeredNetwork& net, const Tensor& x);
// Optionally softmaxed model applied to one input vector.
Tensor forward_single(const LayeredNetwork& net, const Tensor& x, bool softmaxed);

// [X, f_1(X), f_2(f_1(X)), ..., F(X)]
std::vector<Tensor> layer_activations(const LayeredNetwork& net, const Tensor& x);

// Jacobian of layer l (0-based) at its incoming activations, acting on
// row-major flattened d_{l-1} x N matrices.
LinearOperator layer_io_jacobian(const LayeredNetwork& net, std::size_t l, const Tensor& x);

// Derivative of layer l's output with respect to its own parameters:
// (dW, db) -> dW f_{l-1}(X) + db 1^T.
LinearOperator layer_param_derivative(const LayeredNetwork& net, std::size_t l, const Tensor& x);

// Jacobian of the whole model output with respect to the input batch.
LinearOperator network_io_jacobian(const LayeredNetwork& net, const Tensor& x);

// Column-wise softmax with max subtraction.
Tensor softmax(const Tensor& z);

// ---- serialisation ------------------------------------------------------------

nlohmann::json architecture_to_json(const LayeredNetwork& net);
// Parameters are left at zero; load them separately.
LayeredNetwork network_from_json(const nlohmann::json& doc);

void write_params(const std::filesystem::path& path, const Tensor& params);
Tensor read_params(const std::filesystem::path& path);

void save_network(const LayeredNetwork& net, const std::filesystem::path& json_path,
                  const std::filesystem::path& params_path);
LayeredNetwork load_network(const std::filesystem::path& json_path,
                            const std::filesystem::path& params_path);

}  // namespace curvlab
