#include "opticam/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "opticam/rng.hpp"

namespace opticam::nn {

namespace {

thread_local std::uint64_t g_forward_passes = 0;

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor bias_uniform(std::size_t count, std::size_t fan_in, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(Shape{count});
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

void init_layer(LayerSpec& layer, std::uint64_t seed, std::size_t layer_index) {
  Rng rng(seed, layer_index);
  const Shape& ws = layer.params.at(0).shape();
  if (layer.kind == LayerKind::Conv2d) {
    const std::size_t taps = ws[2] * ws[3];
    const std::size_t fan_in = ws[1] * taps;
    const std::size_t fan_out = ws[0] * taps;
    layer.params[0] = glorot_uniform(ws, fan_in, fan_out, rng);
    layer.params[1] = bias_uniform(ws[0], fan_in, rng);
  } else if (layer.kind == LayerKind::Linear) {
    layer.params[0] = glorot_uniform(ws, ws[1], ws[0], rng);
    layer.params[1] = bias_uniform(ws[0], ws[1], rng);
  }
}

LayerSpec make_layer(std::string name, LayerKind kind, std::vector<Tensor> params = {}, bool hookable = false) {
  LayerSpec layer;
  layer.name = std::move(name);
  layer.kind = kind;
  layer.params = std::move(params);
  layer.hookable = hookable;
  return layer;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::InputNormalize: return "input_normalize";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2d: return "max_pool2d";
    case LayerKind::GlobalAveragePool: return "global_average_pool";
    case LayerKind::Linear: return "linear";
  }
  return "unknown";
}

std::uint64_t forward_pass_count() { return g_forward_passes; }
void reset_forward_pass_count() { g_forward_passes = 0; }

// ---------------------------------------------------------------------------
// Network

Network::Network(std::vector<LayerSpec> layers, std::size_t class_count, InputShape input_shape)
    : layers_(std::move(layers)), class_count_(class_count), input_shape_(input_shape) {
  std::unordered_set<std::string> names;
  for (const auto& layer : layers_) {
    if (!names.insert(layer.name).second) throw std::invalid_argument("network: duplicate layer name " + layer.name);
  }
  if (class_count_ < 2) throw std::invalid_argument("network: class_count must be >= 2");
}

std::size_t Network::layer_index(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw std::invalid_argument("network: unknown layer '" + std::string(name) + "'");
}

std::size_t Network::hook_index(std::string_view name) const {
  const std::size_t idx = layer_index(name);
  if (!layers_[idx].hookable) throw std::invalid_argument("network: layer '" + std::string(name) + "' is not hookable");
  return idx;
}

std::string Network::final_feature_layer() const {
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::GlobalAveragePool && layers_[i - 1].hookable) return layers_[i - 1].name;
  }
  throw std::logic_error("network: no hookable layer feeds global average pooling");
}

std::vector<std::size_t> Network::parameterized_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].parameterized()) out.push_back(i);
  }
  return out;
}

const Tensor& Network::normalization_mean() const {
  return layers_.at(layer_index("normalize")).params.at(0);
}

const Tensor& Network::normalization_std() const {
  return layers_.at(layer_index("normalize")).params.at(1);
}

void Network::set_normalization(Tensor mean, Tensor std) {
  const Shape expected{input_shape_.channels};
  if (mean.shape() != expected || std.shape() != expected) {
    throw std::invalid_argument("network: normalization stats must have shape " + to_string(expected));
  }
  for (double s : std.data()) {
    if (!(s > 0.0)) throw std::invalid_argument("network: normalization std must be positive");
  }
  auto& layer = layers_.at(layer_index("normalize"));
  layer.params = {std::move(mean), std::move(std)};
}

BoundParams Network::bind(ad::Tape& tape, ParamMode mode) const {
  BoundParams bound;
  bound.per_layer.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const auto& p : layers_[i].params) {
      const bool trainable = mode == ParamMode::Trainable && layers_[i].parameterized();
      bound.per_layer[i].push_back(trainable ? tape.variable(p) : tape.constant(p));
    }
  }
  return bound;
}

ad::Var Network::run(ad::Var x, const BoundParams& params, std::size_t begin, std::size_t end) const {
  if (end > layers_.size() || begin > end) throw std::out_of_range("network: bad layer range");
  ad::Tape& tape = x.tape();
  for (std::size_t i = begin; i < end; ++i) {
    const LayerSpec& layer = layers_[i];
    const auto& p = params.per_layer.at(i);
    switch (layer.kind) {
      case LayerKind::InputNormalize: {
        const Shape& s = x.shape();
        if (s.size() != 3 || s[0] != input_shape_.channels) {
          throw std::invalid_argument("input_normalize: expected " + std::to_string(input_shape_.channels) +
                                      " channels, got " + to_string(s));
        }
        const std::size_t plane = s[1] * s[2];
        Tensor offset(s), scale(s);
        const Tensor& mu = p.at(0).value();
        const Tensor& sd = p.at(1).value();
        for (std::size_t c = 0; c < s[0]; ++c) {
          for (std::size_t j = 0; j < plane; ++j) {
            offset[c * plane + j] = mu[c];
            scale[c * plane + j] = 1.0 / sd[c];
          }
        }
        x = ad::mul(ad::sub(x, tape.constant(std::move(offset))), tape.constant(std::move(scale)));
        break;
      }
      case LayerKind::Conv2d: x = ad::conv2d(x, p.at(0), p.at(1)); break;
      case LayerKind::Relu: x = ad::relu(x); break;
      case LayerKind::MaxPool2d: x = ad::max_pool2d(x); break;
      case LayerKind::GlobalAveragePool: x = ad::global_average_pool(x); break;
      case LayerKind::Linear: x = ad::linear(x, p.at(0), p.at(1)); break;
    }
  }
  if (end == layers_.size() && begin < end) ++g_forward_passes;
  return x;
}

void Network::check_image(const Tensor& image) const {
  if (image.shape() != input_shape_.as_shape()) {
    throw std::invalid_argument("network: image shape " + to_string(image.shape()) + " does not match input " +
                                to_string(input_shape_.as_shape()));
  }
}

ad::Var Network::forward(ad::Var image, const BoundParams& params) const {
  return run(image, params, 0, layers_.size());
}

ad::Var Network::forward(ad::Var image) const {
  return forward(image, bind(image.tape(), ParamMode::Constant));
}

ad::Var Network::forward_from(std::string_view layer, ad::Var features) const {
  const std::size_t idx = hook_index(layer);
  return run(features, bind(features.tape(), ParamMode::Constant), idx + 1, layers_.size());
}

Tensor Network::logits(const Tensor& image) const {
  check_image(image);
  ad::Tape tape;
  return forward(tape.constant(image)).value();
}

Tensor Network::probabilities(const Tensor& image) const {
  check_image(image);
  ad::Tape tape;
  return ad::softmax(forward(tape.constant(image))).value();
}

Tensor Network::logits_from_features(std::string_view layer, const Tensor& features) const {
  ad::Tape tape;
  return forward_from(layer, tape.constant(features)).value();
}

Tensor Network::features(const Tensor& image, std::string_view layer) const {
  check_image(image);
  const std::size_t idx = hook_index(layer);
  ad::Tape tape;
  return run(tape.constant(image), bind(tape, ParamMode::Constant), 0, idx + 1).value();
}

FeatureForward forward_with_features(const Network& net, const Tensor& image, std::string_view layer) {
  net.check_image(image);
  const std::size_t idx = net.hook_index(layer);
  ad::Tape tape;
  const BoundParams params = net.bind(tape, ParamMode::Constant);
  ad::Var features = net.run(tape.constant(image), params, 0, idx + 1);
  ad::Var logits = net.run(features, params, idx + 1, net.layers().size());
  return FeatureForward{logits.value(), features.value()};
}

std::size_t argmax(const Tensor& values) {
  auto v = values.data();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Construction

Network build_toy_cnn(std::size_t class_count, InputShape input_shape, std::uint64_t seed) {
  if (class_count < 2) throw std::invalid_argument("build_toy_cnn: class_count must be >= 2");
  if (input_shape.channels != 3) throw std::invalid_argument("build_toy_cnn: expected 3 input channels");
  if (input_shape.height == 0 || input_shape.width == 0 || input_shape.height % 4 != 0 ||
      input_shape.width % 4 != 0) {
    throw std::invalid_argument("build_toy_cnn: input spatial size must be a positive multiple of 4");
  }
  constexpr std::size_t kConv1 = 8;
  constexpr std::size_t kConv2 = 16;
  std::vector<LayerSpec> layers;
  layers.push_back(make_layer("normalize", LayerKind::InputNormalize,
                              {Tensor(Shape{3}, 0.0), Tensor(Shape{3}, 1.0)}));
  layers.push_back(make_layer("conv1", LayerKind::Conv2d, {Tensor(Shape{kConv1, 3, 3, 3}), Tensor(Shape{kConv1})}));
  layers.push_back(make_layer("relu1", LayerKind::Relu, {}, true));
  layers.push_back(make_layer("pool1", LayerKind::MaxPool2d, {}, true));
  layers.push_back(
      make_layer("conv2", LayerKind::Conv2d, {Tensor(Shape{kConv2, kConv1, 3, 3}), Tensor(Shape{kConv2})}));
  layers.push_back(make_layer("relu2", LayerKind::Relu, {}, true));
  layers.push_back(make_layer(std::string(kDefaultLayer), LayerKind::MaxPool2d, {}, true));
  layers.push_back(make_layer("gap", LayerKind::GlobalAveragePool));
  layers.push_back(make_layer("fc", LayerKind::Linear, {Tensor(Shape{class_count, kConv2}), Tensor(Shape{class_count})}));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].parameterized()) init_layer(layers[i], seed, i);
  }
  return Network(std::move(layers), class_count, input_shape);
}

Network randomize_from_layer(const Network& net, std::size_t stage, std::uint64_t seed) {
  const auto param_layers = net.parameterized_layers();
  if (stage > param_layers.size()) {
    throw std::invalid_argument("randomize_from_layer: stage " + std::to_string(stage) + " exceeds " +
                                std::to_string(param_layers.size()) + " parameterized layers");
  }
  Network out = net;
  for (std::size_t s = 0; s < stage; ++s) {
    const std::size_t idx = param_layers[param_layers.size() - 1 - s];
    init_layer(out.mutable_layers()[idx], seed, idx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

std::pair<Tensor, Tensor> channel_statistics(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("channel_statistics: no images");
  const Shape& s = images.front().shape();
  if (s.size() != 3) throw std::invalid_argument("channel_statistics: expected [C,H,W] images");
  const std::size_t channels = s[0];
  const std::size_t plane = s[1] * s[2];
  Tensor mean(Shape{channels}), std(Shape{channels});
  const double count = static_cast<double>(images.size() * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    double total = 0.0;
    for (const auto& img : images) {
      for (std::size_t j = 0; j < plane; ++j) total += img[c * plane + j];
    }
    const double mu = total / count;
    double sq = 0.0;
    for (const auto& img : images) {
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = img[c * plane + j] - mu;
        sq += d * d;
      }
    }
    mean[c] = mu;
    const double sd = std::sqrt(sq / count);
    std[c] = sd > 1e-12 ? sd : 1.0;
  }
  return {mean, std};
}

double accuracy(const Network& net, const LabeledImages& set) {
  if (set.size() == 0) throw std::invalid_argument("accuracy: empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (argmax(net.logits(set.images[i])) == set.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainResult train(const Network& net, const LabeledImages& train_set, const LabeledImages& heldout,
                  const TrainConfig& config) {
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (heldout.size() == 0) throw std::invalid_argument("train: empty held-out set");
  if (train_set.labels.size() != train_set.size() || heldout.labels.size() != heldout.size()) {
    throw std::invalid_argument("train: image and label counts differ");
  }
  for (auto label : train_set.labels) {
    if (label >= net.class_count()) throw std::invalid_argument("train: label out of range");
  }
  if (config.batch_size == 0 || !(config.learning_rate > 0.0) || config.momentum < 0.0) {
    throw std::invalid_argument("train: batch size and learning rate must be positive");
  }

  Network model = net;
  auto [mean, std] = channel_statistics(train_set.images);
  model.set_normalization(std::move(mean), std::move(std));

  const auto param_layers = model.parameterized_layers();
  std::vector<std::vector<Tensor>> velocity;
  for (auto idx : param_layers) {
    std::vector<Tensor> v;
    for (const auto& p : model.layers()[idx].params) v.emplace_back(p.shape(), 0.0);
    velocity.push_back(std::move(v));
  }

  TrainResult result{model, 0.0, {}};
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.seed, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<std::vector<Tensor>> grads;
      for (auto idx : param_layers) {
        std::vector<Tensor> g;
        for (const auto& p : model.layers()[idx].params) g.emplace_back(p.shape(), 0.0);
        grads.push_back(std::move(g));
      }
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t sample = order[b];
        ad::Tape tape;
        BoundParams bound = model.bind(tape, ParamMode::Trainable);
        ad::Var logits = model.forward(tape.constant(train_set.images[sample]), bound);
        ad::Var loss = ad::cross_entropy(logits, train_set.labels[sample]);
        tape.backward(loss);
        epoch_loss += loss.value().item();
        for (std::size_t l = 0; l < param_layers.size(); ++l) {
          const auto& vars = bound.per_layer[param_layers[l]];
          for (std::size_t p = 0; p < vars.size(); ++p) {
            auto src = tape.grad(vars[p]).data();
            auto dst = grads[l][p].data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
        }
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      auto& layers = model.mutable_layers();
      for (std::size_t l = 0; l < param_layers.size(); ++l) {
        auto& params = layers[param_layers[l]].params;
        for (std::size_t p = 0; p < params.size(); ++p) {
          auto w = params[p].data();
          auto v = velocity[l][p].data();
          auto g = grads[l][p].data();
          for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = config.momentum * v[k] + g[k] * scale;
            w[k] -= config.learning_rate * v[k];
          }
        }
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  result.network = model;
  result.heldout_accuracy = accuracy(model, heldout);
  return result;
}

}  // namespace opticam::nn
