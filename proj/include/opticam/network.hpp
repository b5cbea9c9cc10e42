#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "opticam/autodiff.hpp"
#include "opticam/tensor.hpp"

namespace opticam::nn {

enum class LayerKind { InputNormalize, Conv2d, Relu, MaxPool2d, GlobalAveragePool, Linear };

std::string_view layer_kind_name(LayerKind kind);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  /// conv2d/linear: {weight, bias}; input_normalize: {mean, std}; others empty.
  std::vector<Tensor> params;
  bool hookable = false;

  bool parameterized() const { return kind == LayerKind::Conv2d || kind == LayerKind::Linear; }
};

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  Shape as_shape() const { return {channels, height, width}; }
  bool operator==(const InputShape&) const = default;
};

/// Parameters are either constants on the tape (inference, attribution) or
/// variables whose gradients are read back (training).
enum class ParamMode { Constant, Trainable };

/// Tape handles for every layer's parameters, in LayerSpec::params order.
struct BoundParams {
  std::vector<std::vector<ad::Var>> per_layer;
};

class Network {
 public:
  Network(std::vector<LayerSpec> layers, std::size_t class_count, InputShape input_shape);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<LayerSpec>& mutable_layers() { return layers_; }
  std::size_t class_count() const { return class_count_; }
  const InputShape& input_shape() const { return input_shape_; }

  /// Index of a named layer; throws on an unknown name.
  std::size_t layer_index(std::string_view name) const;
  /// Index of a hookable layer; throws if unknown or not hookable.
  std::size_t hook_index(std::string_view name) const;
  /// Last hookable layer before global average pooling.
  std::string final_feature_layer() const;

  std::vector<std::size_t> parameterized_layers() const;

  const Tensor& normalization_mean() const;
  const Tensor& normalization_std() const;
  void set_normalization(Tensor mean, Tensor std);

  BoundParams bind(ad::Tape& tape, ParamMode mode) const;

  /// Runs layers [begin, end) on x. A pass that reaches the last layer counts
  /// as one classifier forward pass.
  ad::Var run(ad::Var x, const BoundParams& params, std::size_t begin, std::size_t end) const;

  ad::Var forward(ad::Var image, const BoundParams& params) const;
  ad::Var forward(ad::Var image) const;

  /// Tail of the network after `layer` applied to a feature stack.
  ad::Var forward_from(std::string_view layer, ad::Var features) const;

  /// Plain inference helpers.
  Tensor logits(const Tensor& image) const;
  Tensor probabilities(const Tensor& image) const;
  Tensor logits_from_features(std::string_view layer, const Tensor& features) const;
  /// Head of the network up to and including `layer`; not a classifier pass.
  Tensor features(const Tensor& image, std::string_view layer) const;

  void check_image(const Tensor& image) const;

 private:
  std::vector<LayerSpec> layers_;
  std::size_t class_count_;
  InputShape input_shape_;
};

struct FeatureForward {
  Tensor logits;
  Tensor features;
};

/// Logits and the post-activation feature stack at a hookable layer.
FeatureForward forward_with_features(const Network& net, const Tensor& image, std::string_view layer);

/// Counts classifier forward passes made by the calling thread.
std::uint64_t forward_pass_count();
void reset_forward_pass_count();

inline constexpr std::string_view kDefaultLayer = "feat";

/// input_normalize -> conv(3x3) -> relu -> maxpool -> conv(3x3) -> relu ->
/// maxpool ("feat") -> GAP -> linear. Glorot-uniform weights from `seed`.
Network build_toy_cnn(std::size_t class_count, InputShape input_shape, std::uint64_t seed);

/// Re-initializes the last `stage` parameterized layers, counting from the
/// output. A layer's fresh values depend only on (seed, layer), so networks
/// from different stages share the layers both randomized.
Network randomize_from_layer(const Network& net, std::size_t stage, std::uint64_t seed);

struct LabeledImages {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 42;
};

struct TrainResult {
  Network network;
  double heldout_accuracy = 0.0;
  std::vector<double> epoch_losses;
};

/// Per-channel mean and standard deviation over a set of [C,H,W] images.
std::pair<Tensor, Tensor> channel_statistics(const std::vector<Tensor>& images);

/// SGD with momentum on cross-entropy. Normalization statistics come from the
/// training split before the first step.
TrainResult train(const Network& net, const LabeledImages& train_set, const LabeledImages& heldout,
                  const TrainConfig& config);

double accuracy(const Network& net, const LabeledImages& set);

std::size_t argmax(const Tensor& values);

}  // namespace opticam::nn
