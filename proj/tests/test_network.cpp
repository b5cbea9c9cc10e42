#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "opticam/network.hpp"
#include "opticam/saliency.hpp"
#include "opticam/weights_io.hpp"
#include "support.hpp"

using namespace opticam;
using namespace testing_support;

namespace {

Tensor random_image(Rng& rng, std::size_t size = 32) { return random_tensor(rng, {3, size, size}, 0.0, 1.0); }

std::vector<Tensor> all_params(const nn::Network& net) {
  std::vector<Tensor> out;
  for (std::size_t idx : net.parameterized_layers()) {
    for (const auto& p : net.layers()[idx].params) out.push_back(p);
  }
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("opticam_test_" + name);
}

}  // namespace

TEST(Network, FeatShapeForTwoClasses) {
  const auto net = nn::build_toy_cnn(2, {3, 32, 32}, 1);
  Rng rng(1);
  const auto ff = nn::forward_with_features(net, random_image(rng), nn::kDefaultLayer);
  EXPECT_EQ(ff.features.shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(ff.logits.shape(), (Shape{2}));
  EXPECT_EQ(net.final_feature_layer(), "feat");
}

TEST(Network, SameSeedSameParameters) {
  const auto a = all_params(nn::build_toy_cnn(3, {3, 32, 32}, 17));
  const auto b = all_params(nn::build_toy_cnn(3, {3, 32, 32}, 17));
  const auto c = all_params(nn::build_toy_cnn(3, {3, 32, 32}, 18));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].bit_equal(b[i]));
    EXPECT_FALSE(a[i].bit_equal(c[i]));
  }
}

TEST(Network, GlorotBounds) {
  const auto net = nn::build_toy_cnn(3, {3, 32, 32}, 5);
  const auto& conv1 = net.layers()[net.layer_index("conv1")].params[0];
  const double a = std::sqrt(6.0 / (3 * 9 + 8 * 9));
  for (double v : conv1.data()) EXPECT_LE(std::fabs(v), a);
  const auto& fc = net.layers()[net.layer_index("fc")].params[0];
  const double b = std::sqrt(6.0 / (16 + 3));
  for (double v : fc.data()) EXPECT_LE(std::fabs(v), b);
}

TEST(Network, RejectsInvalidShapes) {
  EXPECT_THROW(nn::build_toy_cnn(1, {3, 32, 32}, 1), std::invalid_argument);
  EXPECT_THROW(nn::build_toy_cnn(2, {3, 30, 30}, 1), std::invalid_argument);
  EXPECT_THROW(nn::build_toy_cnn(2, {1, 32, 32}, 1), std::invalid_argument);
  const auto net = nn::build_toy_cnn(2, {3, 32, 32}, 1);
  EXPECT_THROW(net.logits(Tensor(Shape{3, 16, 16})), std::invalid_argument);
}

TEST(Network, UnknownOrUnhookableLayerRejected) {
  const auto net = nn::build_toy_cnn(2, {3, 32, 32}, 1);
  Rng rng(1);
  EXPECT_THROW(nn::forward_with_features(net, random_image(rng), "nope"), std::invalid_argument);
  EXPECT_THROW(nn::forward_with_features(net, random_image(rng), "conv1"), std::invalid_argument);
}

TEST(Network, FeaturesNonNegativeAndConsistent) {
  const auto net = nn::build_toy_cnn(3, {3, 32, 32}, 3);
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor image = trial == 0 ? Tensor(Shape{3, 32, 32}) : random_image(rng);
    for (const char* layer : {"relu1", "pool1", "relu2", "feat"}) {
      const auto ff = nn::forward_with_features(net, image, layer);
      for (double v : ff.features.data()) EXPECT_GE(v, 0.0);
      const Tensor plain = net.logits(image);
      for (std::size_t c = 0; c < plain.size(); ++c) EXPECT_NEAR(ff.logits[c], plain[c], 1e-12);
      const Tensor refed = net.logits_from_features(layer, ff.features);
      for (std::size_t c = 0; c < plain.size(); ++c) EXPECT_NEAR(refed[c], plain[c], 1e-12);
    }
  }
}

TEST(Network, NormalizeMeanImageGivesZero) {
  auto net = nn::build_toy_cnn(2, {3, 8, 8}, 3);
  net.set_normalization(Tensor::vector({0.2, 0.4, 0.6}), Tensor::vector({0.1, 0.5, 2.0}));
  Tensor mean_image(Shape{3, 8, 8});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < 64; ++p) mean_image[c * 64 + p] = net.normalization_mean()[c];
  }
  ad::Tape tape;
  const auto params = net.bind(tape, nn::ParamMode::Constant);
  const auto normalized = net.run(tape.constant(mean_image), params, 0, 1);
  for (double v : normalized.value().data()) EXPECT_NEAR(v, 0.0, 1e-12);
  // (x - mean) / std on a non-mean pixel
  mean_image[64] = 0.9;
  const auto second = net.run(tape.constant(mean_image), params, 0, 1);
  EXPECT_NEAR(second.value()[64], (0.9 - 0.4) / 0.5, 1e-12);
}

TEST(Network, ForwardPassCounter) {
  const auto net = nn::build_toy_cnn(3, {3, 32, 32}, 3);
  Rng rng(2);
  const Tensor image = random_image(rng);
  nn::reset_forward_pass_count();
  net.logits(image);
  net.probabilities(image);
  EXPECT_EQ(nn::forward_pass_count(), 2u);
  net.features(image, "feat");
  EXPECT_EQ(nn::forward_pass_count(), 2u);
}

TEST(Training, SeparableTwoClassReachesNinetyPercent) {
  const auto data = harness::generate_synthetic_dataset(42, 150, 32, 2);
  const auto net = nn::build_toy_cnn(2, {3, 32, 32}, 42);
  nn::TrainConfig config;  // 20 epochs
  const auto result = nn::train(net, data.labeled(harness::Split::Train), data.labeled(harness::Split::Test), config);
  EXPECT_GE(result.heldout_accuracy, 0.9);
  EXPECT_EQ(result.epoch_losses.size(), 20u);
  EXPECT_LT(result.epoch_losses.back(), result.epoch_losses.front());
}

TEST(Training, ZeroEpochsLeavesWeights) {
  const auto data = harness::generate_synthetic_dataset(42, 10, 16, 2);
  const auto net = nn::build_toy_cnn(2, {3, 16, 16}, 42);
  nn::TrainConfig config;
  config.epochs = 0;
  const auto result = nn::train(net, data.labeled(harness::Split::Train), data.labeled(harness::Split::Test), config);
  const auto before = all_params(net), after = all_params(result.network);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i].bit_equal(after[i]));
}

TEST(Training, StoresTrainingStatistics) {
  const auto data = harness::generate_synthetic_dataset(42, 10, 16, 2);
  const auto train_set = data.labeled(harness::Split::Train);
  const auto result = nn::train(nn::build_toy_cnn(2, {3, 16, 16}, 1), train_set, data.labeled(harness::Split::Test),
                                nn::TrainConfig{1, 4, 0.01, 0.9, 1});
  const auto [mean, std] = nn::channel_statistics(train_set.images);
  EXPECT_TRUE(result.network.normalization_mean().bit_equal(mean));
  EXPECT_TRUE(result.network.normalization_std().bit_equal(std));
}

TEST(Training, Deterministic) {
  const auto data = harness::generate_synthetic_dataset(7, 12, 16, 2);
  nn::TrainConfig config;
  config.epochs = 3;
  auto run = [&] {
    return nn::serialize_weights(nn::train(nn::build_toy_cnn(2, {3, 16, 16}, 7), data.labeled(harness::Split::Train),
                                           data.labeled(harness::Split::Test), config)
                                     .network);
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, EmptyDatasetRejected) {
  const auto net = nn::build_toy_cnn(2, {3, 16, 16}, 1);
  nn::LabeledImages empty, one;
  one.images.push_back(Tensor(Shape{3, 16, 16}));
  one.labels.push_back(0);
  EXPECT_THROW(nn::train(net, empty, one, {}), std::invalid_argument);
  EXPECT_THROW(nn::train(net, one, empty, {}), std::invalid_argument);
  one.labels[0] = 5;
  EXPECT_THROW(nn::train(net, one, one, {}), std::invalid_argument);
}

TEST(Weights, RoundTripBitExact) {
  auto net = nn::build_toy_cnn(3, {3, 32, 32}, 9);
  net.set_normalization(Tensor::vector({0.1, 0.2, 0.3}), Tensor::vector({0.4, 0.5, 0.6}));
  const auto path = temp_file("roundtrip.ocw");
  nn::save_weights(net, path);
  const auto loaded = nn::load_weights(path);
  EXPECT_EQ(loaded.class_count(), 3u);
  EXPECT_EQ(loaded.input_shape(), net.input_shape());
  ASSERT_EQ(loaded.layers().size(), net.layers().size());
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    ASSERT_EQ(loaded.layers()[i].params.size(), net.layers()[i].params.size());
    for (std::size_t p = 0; p < net.layers()[i].params.size(); ++p) {
      EXPECT_TRUE(loaded.layers()[i].params[p].bit_equal(net.layers()[i].params[p]));
    }
  }
  EXPECT_EQ(nn::serialize_weights(loaded), nn::serialize_weights(net));
  std::filesystem::remove(path);
}

TEST(Weights, FileLayout) {
  const auto bytes = nn::serialize_weights(nn::build_toy_cnn(2, {3, 8, 8}, 1));
  EXPECT_EQ(bytes.substr(0, 4), "OCW1");
  const auto count = static_cast<unsigned char>(bytes[4]) | (static_cast<unsigned char>(bytes[5]) << 8);
  // normalize mean/std, conv1, conv2, fc weight/bias, plus the input-shape record
  EXPECT_EQ(count, 9);
}

TEST(Weights, Rejections) {
  const auto net = nn::build_toy_cnn(2, {3, 8, 8}, 1);
  std::string bytes = nn::serialize_weights(net);
  std::string bad_magic = bytes;
  bad_magic[3] = '2';
  EXPECT_THROW(nn::deserialize_weights(bad_magic), std::runtime_error);
  EXPECT_THROW(nn::deserialize_weights(std::string_view(bytes).substr(0, bytes.size() - 3)), std::runtime_error);
  EXPECT_THROW(nn::deserialize_weights(bytes + "x"), std::runtime_error);
  EXPECT_THROW(nn::deserialize_weights(bytes, nn::build_toy_cnn(3, {3, 8, 8}, 1)), std::runtime_error);
  EXPECT_THROW(nn::load_weights(temp_file("does_not_exist.ocw")), std::runtime_error);
}

TEST(Randomize, StageZeroIsIdentity) {
  const auto net = nn::build_toy_cnn(3, {3, 32, 32}, 2);
  EXPECT_EQ(nn::serialize_weights(nn::randomize_from_layer(net, 0, 5)), nn::serialize_weights(net));
}

TEST(Randomize, AllStagesChangeEveryTensor) {
  const auto net = nn::build_toy_cnn(3, {3, 32, 32}, 2);
  const auto stages = net.parameterized_layers().size();
  EXPECT_EQ(stages, 3u);
  const auto fresh = all_params(nn::randomize_from_layer(net, stages, 5));
  const auto orig = all_params(net);
  for (std::size_t i = 0; i < orig.size(); ++i) EXPECT_FALSE(fresh[i].bit_equal(orig[i]));
  EXPECT_THROW(nn::randomize_from_layer(net, stages + 1, 5), std::invalid_argument);
}

TEST(Randomize, StagesDifferInExactlyTheLayersBetween) {
  const auto net = nn::build_toy_cnn(3, {3, 32, 32}, 2);
  const auto params = net.parameterized_layers();
  for (std::size_t s = 0; s <= params.size(); ++s) {
    for (std::size_t t = s + 1; t <= params.size(); ++t) {
      const auto a = nn::randomize_from_layer(net, s, 5);
      const auto b = nn::randomize_from_layer(net, t, 5);
      for (std::size_t j = 0; j < params.size(); ++j) {
        const std::size_t from_output = params.size() - j;  // 1 for the last layer
        const bool should_differ = from_output > s && from_output <= t;
        const auto& la = a.layers()[params[j]].params;
        const auto& lb = b.layers()[params[j]].params;
        bool differs = false;
        for (std::size_t p = 0; p < la.size(); ++p) differs |= !la[p].bit_equal(lb[p]);
        EXPECT_EQ(differs, should_differ) << "s=" << s << " t=" << t << " layer=" << j;
      }
    }
  }
}

TEST(Network, InferencePurity) {
  const auto net = nn::build_toy_cnn(3, {3, 32, 32}, 2);
  const auto before = nn::serialize_weights(net);
  Rng rng(3);
  const Tensor image = random_image(rng);
  saliency::OptiConfig config;
  config.max_iterations = 3;
  for (auto method : saliency::all_methods()) saliency::explain(method, net, image, 1, "feat", config);
  EXPECT_EQ(nn::serialize_weights(net), before);
}
