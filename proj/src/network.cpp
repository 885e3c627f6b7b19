#include "curvlab/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <set>

#include "curvlab/rng.hpp"

namespace curvlab {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::kLinear, "linear"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kTanh, "tanh"},
    {LayerKind::kGaussian, "gaussian"},
    {LayerKind::kSmoothLeakyRelu, "smooth-leaky-relu"},
    {LayerKind::kBatchNorm, "batch-norm"},
    {LayerKind::kSoftmax, "softmax"},
};

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(BnMode mode) { return mode == BnMode::kTrain ? "train" : "eval"; }

BnMode parse_bn_mode(std::string_view name) {
  if (name == "train") return BnMode::kTrain;
  if (name == "eval") return BnMode::kEval;
  throw ConfigError("unknown bn_mode '" + std::string(name) + "'");
}

std::size_t Layer::param_count() const {
  return kind == LayerKind::kLinear ? out_dim * (in_dim + 1) : 0;
}

Layer Layer::linear(std::size_t in_dim, std::size_t out_dim) {
  Layer l;
  l.kind = LayerKind::kLinear;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  return l;
}

Layer Layer::activation(LayerKind kind, std::size_t dim) {
  if (kind == LayerKind::kLinear || kind == LayerKind::kBatchNorm) {
    throw std::invalid_argument("not an activation kind");
  }
  Layer l;
  l.kind = kind;
  l.in_dim = dim;
  l.out_dim = dim;
  return l;
}

Layer Layer::batch_norm(std::size_t dim, BnMode mode, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("bn_eps must be positive");
  Layer l;
  l.kind = LayerKind::kBatchNorm;
  l.in_dim = dim;
  l.out_dim = dim;
  l.bn_mode = mode;
  l.bn_eps = eps;
  l.running_mean.assign(dim, 0.0);
  l.running_var.assign(dim, 1.0);
  return l;
}

LayeredNetwork::LayeredNetwork(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("network needs at least one layer");
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    if (layer.in_dim == 0 || layer.out_dim == 0) {
      throw ShapeError("layer " + std::to_string(l) + " has a zero dimension");
    }
    if (layer.kind != LayerKind::kLinear && layer.in_dim != layer.out_dim) {
      throw ShapeError("layer " + std::to_string(l) + " must preserve dimension");
    }
    if (l > 0 && layers_[l - 1].out_dim != layer.in_dim) {
      throw ShapeError("layer " + std::to_string(l) + " input does not chain with previous output");
    }
    if (layer.kind == LayerKind::kBatchNorm) {
      if (layer.running_mean.empty()) layer.running_mean.assign(layer.in_dim, 0.0);
      if (layer.running_var.empty()) layer.running_var.assign(layer.in_dim, 1.0);
      if (layer.running_mean.size() != layer.in_dim || layer.running_var.size() != layer.in_dim) {
        throw ShapeError("batch norm statistics have the wrong length");
      }
    }
    offsets_.push_back(offset);
    offset += layer.param_count();
  }
  params_ = Tensor(Shape{offset});
}

void LayeredNetwork::set_params(Tensor params) {
  if (params.size() != params_.size()) {
    throw ShapeError("parameter vector has length " + std::to_string(params.size()) +
                     ", network expects " + std::to_string(params_.size()));
  }
  params_ = params.reshaped(Shape{params.size()});
}

Tensor LayeredNetwork::weight(std::size_t l) const {
  const Layer& layer = layers_.at(l);
  if (layer.kind != LayerKind::kLinear) throw std::invalid_argument("layer has no weight matrix");
  Tensor w(Shape{layer.out_dim, layer.in_dim});
  std::copy_n(params_.data().begin() + static_cast<std::ptrdiff_t>(offsets_[l]), w.size(),
              w.data().begin());
  return w;
}

Tensor LayeredNetwork::bias(std::size_t l) const {
  const Layer& layer = layers_.at(l);
  if (layer.kind != LayerKind::kLinear) throw std::invalid_argument("layer has no bias");
  Tensor b(Shape{layer.out_dim});
  std::copy_n(params_.data().begin() +
                  static_cast<std::ptrdiff_t>(offsets_[l] + layer.out_dim * layer.in_dim),
              b.size(), b.data().begin());
  return b;
}

void LayeredNetwork::set_weight(std::size_t l, const Tensor& w) {
  const Layer& layer = layers_.at(l);
  if (layer.kind != LayerKind::kLinear || w.size() != layer.out_dim * layer.in_dim) {
    throw ShapeError("set_weight: shape mismatch");
  }
  std::copy(w.data().begin(), w.data().end(),
            params_.data().begin() + static_cast<std::ptrdiff_t>(offsets_[l]));
}

bool LayeredNetwork::has_train_bn() const {
  for (const auto& l : layers_) {
    if (l.kind == LayerKind::kBatchNorm && l.bn_mode == BnMode::kTrain) return true;
  }
  return false;
}

void LayeredNetwork::set_bn_mode(BnMode mode) {
  for (auto& l : layers_) {
    if (l.kind == LayerKind::kBatchNorm) l.bn_mode = mode;
  }
}

void LayeredNetwork::freeze_bn_statistics(const Tensor& x) {
  Tensor a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Layer& layer = layers_[l];
    if (layer.kind == LayerKind::kBatchNorm) {
      const std::size_t n = a.cols();
      for (std::size_t i = 0; i < layer.in_dim; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += a(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (a(i, j) - mean) * (a(i, j) - mean);
        layer.running_mean[i] = mean;
        layer.running_var[i] = var / static_cast<double>(n);
      }
    }
    ad::Graph<double> g;
    a = apply_layer(*this, l, g.constant(params_), g.constant(a)).value();
  }
}

void LayeredNetwork::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.kind != LayerKind::kLinear) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim));
    for (std::size_t k = 0; k < layer.param_count(); ++k) {
      params_[offsets_[l] + k] = uniform(rng, -bound, bound);
    }
  }
}

LayeredNetwork make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                        std::size_t out_dim, LayerKind activation,
                        std::optional<BnMode> batch_norm) {
  std::vector<Layer> layers;
  std::size_t prev = in_dim;
  for (std::size_t width : hidden) {
    layers.push_back(Layer::linear(prev, width));
    if (batch_norm) layers.push_back(Layer::batch_norm(width, *batch_norm));
    layers.push_back(Layer::activation(activation, width));
    prev = width;
  }
  layers.push_back(Layer::linear(prev, out_dim));
  return LayeredNetwork(std::move(layers));
}

Tensor forward_batch(const LayeredNetwork& net, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("forward_batch expects a d x N matrix");
  if (x.cols() < 1) throw ShapeError("forward_batch needs at least one column");
  ad::Graph<double> g;
  return forward_program(net, g.constant(net.params()), g.constant(x)).value();
}

Tensor forward_single(const LayeredNetwork& net, const Tensor& x, bool softmaxed) {
  ad::Graph<double> g;
  auto out = forward_program(net, g.constant(net.params()), g.constant(x.reshaped(Shape{x.size()})));
  if (softmaxed) out = ad::softmax(out);
  return out.value();
}

std::vector<Tensor> layer_activations(const LayeredNetwork& net, const Tensor& x) {
  ad::Graph<double> g;
  const auto theta = g.constant(net.params());
  auto a = g.constant(x);
  std::vector<Tensor> out{x};
  for (std::size_t l = 0; l < net.depth(); ++l) {
    a = apply_layer(net, l, theta, a);
    out.push_back(a.value());
  }
  return out;
}

LinearOperator layer_io_jacobian(const LayeredNetwork& net, std::size_t l, const Tensor& x) {
  if (l >= net.depth()) throw std::out_of_range("layer index out of range");
  Tensor input = layer_activations(net, x).at(l);
  const Layer& layer = net.layer(l);
  const Shape in_shape = input.shape();
  Shape out_shape = in_shape;
  out_shape[0] = layer.out_dim;
  auto owned = std::make_shared<const LayeredNetwork>(net);
  auto program = [owned, l](auto& g, auto a) {
    return apply_layer(*owned, l, g.constant(owned->params()), a);
  };
  return make_operator(
      input.size(), shape_size(out_shape),
      [=](const Vector& v) { return to_vector(ad::jvp(program, input, to_tensor(v, in_shape))); },
      [=](const Vector& u) { return to_vector(ad::vjp(program, input, to_tensor(u, out_shape))); });
}

LinearOperator layer_param_derivative(const LayeredNetwork& net, std::size_t l, const Tensor& x) {
  if (l >= net.depth()) throw std::out_of_range("layer index out of range");
  const Layer& layer = net.layer(l);
  if (layer.param_count() == 0) {
    throw std::invalid_argument("layer " + std::to_string(l) + " has no parameters");
  }
  const Tensor features = layer_activations(net, x).at(l);
  const std::size_t n = features.cols();
  const std::size_t in = layer.in_dim;
  const std::size_t out = layer.out_dim;
  const Matrix f = to_matrix(features);
  return make_operator(
      layer.param_count(), out * n,
      [=](const Vector& v) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dw(
            v.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        const auto db = v.segment(static_cast<Eigen::Index>(out * in), static_cast<Eigen::Index>(out));
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> z = dw * f;
        z.colwise() += db;
        return Vector(Eigen::Map<const Vector>(z.data(), z.size()));
      },
      [=](const Vector& u) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> um(
            u.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(n));
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dw = um * f.transpose();
        Vector result(static_cast<Eigen::Index>(out * in + out));
        result.head(static_cast<Eigen::Index>(out * in)) = Eigen::Map<const Vector>(dw.data(), dw.size());
        result.tail(static_cast<Eigen::Index>(out)) = um.rowwise().sum();
        return result;
      });
}

LinearOperator network_io_jacobian(const LayeredNetwork& net, const Tensor& x) {
  const Shape in_shape = x.shape();
  Shape out_shape = in_shape;
  out_shape[0] = net.out_dim();
  auto owned = std::make_shared<const LayeredNetwork>(net);
  auto program = [owned](auto& g, auto a) {
    return forward_program(*owned, g.constant(owned->params()), a);
  };
  return make_operator(
      x.size(), shape_size(out_shape),
      [=](const Vector& v) { return to_vector(ad::jvp(program, x, to_tensor(v, in_shape))); },
      [=](const Vector& u) { return to_vector(ad::vjp(program, x, to_tensor(u, out_shape))); });
}

Tensor softmax(const Tensor& z) {
  require_finite(z, "softmax input");
  return ad::detail::column_softmax(z, false);
}

// ---- serialisation ------------------------------------------------------------

nlohmann::json architecture_to_json(const LayeredNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    nlohmann::json j = {{"kind", to_string(l.kind)}, {"in_dim", l.in_dim}, {"out_dim", l.out_dim}};
    if (l.kind == LayerKind::kBatchNorm) {
      j["bn_mode"] = to_string(l.bn_mode);
      j["bn_eps"] = l.bn_eps;
      j["running_mean"] = l.running_mean;
      j["running_var"] = l.running_var;
    }
    layers.push_back(std::move(j));
  }
  return {{"layers", layers}};
}

LayeredNetwork network_from_json(const nlohmann::json& doc) {
  static const std::set<std::string> kLayerKeys{"kind",   "in_dim",       "out_dim",    "bn_mode",
                                                "bn_eps", "running_mean", "running_var"};
  if (!doc.is_object() || !doc.contains("layers")) throw ConfigError("network JSON needs 'layers'");
  for (const auto& [key, _] : doc.items()) {
    if (key != "layers") throw ConfigError("unknown network key '" + key + "'");
  }
  std::vector<Layer> layers;
  for (const auto& j : doc.at("layers")) {
    for (const auto& [key, _] : j.items()) {
      if (!kLayerKeys.contains(key)) throw ConfigError("unknown layer key '" + key + "'");
    }
    Layer l;
    l.kind = parse_layer_kind(j.at("kind").get<std::string>());
    l.in_dim = j.at("in_dim").get<std::size_t>();
    l.out_dim = j.at("out_dim").get<std::size_t>();
    if (l.kind == LayerKind::kBatchNorm) {
      l.bn_mode = parse_bn_mode(j.value("bn_mode", std::string("train")));
      l.bn_eps = j.value("bn_eps", 1e-5);
      if (!(l.bn_eps > 0.0)) throw ConfigError("bn_eps must be positive");
      if (j.contains("running_mean")) l.running_mean = j.at("running_mean").get<std::vector<double>>();
      if (j.contains("running_var")) l.running_var = j.at("running_var").get<std::vector<double>>();
    } else if (j.contains("bn_mode")) {
      throw ConfigError("bn_mode is only valid on batch-norm layers");
    }
    layers.push_back(std::move(l));
  }
  return LayeredNetwork(std::move(layers));
}

void write_params(const std::filesystem::path& path, const Tensor& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (double v : params.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char bytes[8];
    std::memcpy(bytes, &bits, 8);
    out.write(bytes, 8);
  }
}

Tensor read_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> values;
  char bytes[8];
  while (in.read(bytes, 8)) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    values.push_back(std::bit_cast<double>(bits));
  }
  if (in.gcount() != 0) throw std::runtime_error(path.string() + ": length is not a multiple of 8");
  return Tensor::vector(std::move(values));
}

void save_network(const LayeredNetwork& net, const std::filesystem::path& json_path,
                  const std::filesystem::path& params_path) {
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot open " + json_path.string() + " for writing");
  out << architecture_to_json(net).dump(2) << '\n';
  write_params(params_path, net.params());
}

LayeredNetwork load_network(const std::filesystem::path& json_path,
                            const std::filesystem::path& params_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot open " + json_path.string());
  LayeredNetwork net = network_from_json(nlohmann::json::parse(in));
  net.set_params(read_params(params_path));
  return net;
}

}  // namespace curvlab
