#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opticam/autodiff.hpp"
#include "opticam/network.hpp"
#include "opticam/tensor.hpp"

namespace opticam::saliency {

enum class Normalization { Range, Max, Sigmoid };
enum class Objective { Mask, Diff, IOMask, IODiff };
enum class Selector { Logit, Probability };
enum class Method { Cam, GradCam, GradCamPP, XGradCam, ScoreCam, AblationCam, FakeCam, OptiCam };

std::string_view to_string(Normalization n);
std::string_view to_string(Objective o);
std::string_view to_string(Selector s);
std::string_view to_string(Method m);
Normalization parse_normalization(std::string_view text);
Objective parse_objective(std::string_view text);
Selector parse_selector(std::string_view text);
Method parse_method(std::string_view text);
std::vector<Method> all_methods();

struct SaliencyMap {
  Tensor raw;       // [h,w] at feature resolution, non-negative
  Tensor adapted;   // [H,W] at image resolution, in [0,1]
  std::string method;
  std::size_t target_class = 0;
};

// ---------------------------------------------------------------------------
// Shared masking machinery

/// Upsample to (height, width), then normalize into [0,1].
Tensor adapt_saliency(const Tensor& raw, std::size_t height, std::size_t width,
                      Normalization normalization = Normalization::Range);
ad::Var adapt_saliency(ad::Var raw, std::size_t height, std::size_t width, Normalization normalization);

/// image [C,H,W] times mask [H,W], broadcast over channels.
Tensor apply_mask(const Tensor& image, const Tensor& mask);
ad::Var apply_mask(ad::Var image, ad::Var mask);

/// sum_k weights[k] * features[k] for features [K,h,w].
Tensor combine_channels(const Tensor& features, std::span<const double> weights);
Tensor relu(Tensor t);

// ---------------------------------------------------------------------------
// CAM family

struct ClassGradient {
  Tensor logits;
  Tensor features;  // A, [K,h,w]
  Tensor gradient;  // dy_c/dA, [K,h,w]
};

ClassGradient class_gradient(const nn::Network& net, const Tensor& image, std::size_t target_class,
                             std::string_view layer);

std::vector<double> grad_cam_weights(const Tensor& gradient);
/// `gradient` is d(exp(y_c))/dA, possibly rescaled by a positive constant.
std::vector<double> grad_cam_pp_weights(const Tensor& features, const Tensor& gradient);
std::vector<double> xgrad_cam_weights(const Tensor& features, const Tensor& gradient);
/// u^c_k = f(x . n(up(A^k)))_c - f(0)_c; K+1 classifier passes.
std::vector<double> score_cam_scores(const nn::Network& net, const Tensor& image, std::size_t target_class,
                                     std::string_view layer);
std::vector<double> ablation_cam_weights(const nn::Network& net, const Tensor& image, std::size_t target_class,
                                         std::string_view layer);

SaliencyMap cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer);
SaliencyMap grad_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer);
SaliencyMap grad_cam_pp(const nn::Network& net, const Tensor& image, std::size_t target_class,
                        std::string_view layer);
SaliencyMap xgrad_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer);
SaliencyMap score_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer);
SaliencyMap ablation_cam(const nn::Network& net, const Tensor& image, std::size_t target_class,
                         std::string_view layer);
/// Ones everywhere except a zero at the top-left pixel.
SaliencyMap fake_cam(std::size_t height, std::size_t width);

namespace detail {
/// F(w) = f(x . n(up(sum_k w_k A^k)))_c with raw (un-softmaxed) weights and
/// range normalization, n(0) = 0.
double unsoftmaxed_objective(const nn::Network& net, const Tensor& image, const Tensor& features,
                             std::size_t target_class, std::span<const double> weights);
}  // namespace detail

// ---------------------------------------------------------------------------
// Opti-CAM

struct OptiConfig {
  Objective objective = Objective::Mask;
  Normalization normalization = Normalization::Range;
  Selector selector = Selector::Logit;
  double learning_rate = 0.1;
  std::size_t max_iterations = 100;
  double tolerance = 1e-10;
  /// Starting u; empty means all zeros.
  std::vector<double> init;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

/// F^c_l(x; u) for a fixed image, class and layer.
class OptiObjective {
 public:
  OptiObjective(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer,
                const OptiConfig& config);

  std::size_t channels() const { return channels_; }
  const Tensor& features() const { return features_; }

  double value(std::span<const double> u) const;
  double value_and_gradient(std::span<const double> u, std::vector<double>& gradient) const;

  /// S(x;u) = sum_k softmax(u)_k A^k at feature resolution.
  Tensor saliency(std::span<const double> u) const;

 private:
  double evaluate(std::span<const double> u, std::vector<double>* gradient) const;

  const nn::Network& net_;
  Tensor image_;
  std::size_t target_class_;
  Objective objective_;
  Normalization normalization_;
  Selector selector_;
  Tensor features_;
  Tensor flat_features_;  // [K, h*w]
  std::size_t channels_ = 0;
  double original_score_ = 0.0;
};

struct TracePoint {
  std::size_t iteration = 0;
  double value = 0.0;
};

struct OptiResult {
  SaliencyMap map;
  std::vector<TracePoint> trace;
  std::vector<double> u;        // best iterate
  std::vector<double> weights;  // softmax(u)
  std::size_t best_iteration = 0;
  double best_value = 0.0;
};

/// Adam ascent on F over u; returns the best iterate seen.
OptiResult opti_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer,
                    const OptiConfig& config = {});

std::vector<double> softmax(std::span<const double> u);

/// Dispatches to a method by tag. `config` only matters for Opti-CAM.
SaliencyMap explain(Method method, const nn::Network& net, const Tensor& image, std::size_t target_class,
                    std::string_view layer, const OptiConfig& config = {});

}  // namespace opticam::saliency
