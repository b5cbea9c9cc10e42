#include "opticam/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace opticam::saliency {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::pair<std::string_view, Enum> (&table)[N], const char* what) {
  for (const auto& [name, value] : table) {
    if (name == text) return value;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(text) + "'");
}

constexpr std::pair<std::string_view, Normalization> kNormalizations[] = {
    {"range", Normalization::Range}, {"max", Normalization::Max}, {"sigmoid", Normalization::Sigmoid}};
constexpr std::pair<std::string_view, Objective> kObjectives[] = {{"mask", Objective::Mask},
                                                                  {"diff", Objective::Diff},
                                                                  {"iomask", Objective::IOMask},
                                                                  {"iodiff", Objective::IODiff}};
constexpr std::pair<std::string_view, Selector> kSelectors[] = {{"logit", Selector::Logit},
                                                                {"probability", Selector::Probability}};
constexpr std::pair<std::string_view, Method> kMethods[] = {
    {"cam", Method::Cam},
    {"grad-cam", Method::GradCam},
    {"grad-cam++", Method::GradCamPP},
    {"xgrad-cam", Method::XGradCam},
    {"score-cam", Method::ScoreCam},
    {"ablation-cam", Method::AblationCam},
    {"fake-cam", Method::FakeCam},
    {"opti-cam", Method::OptiCam},
};

template <typename Enum, std::size_t N>
std::string_view name_of(Enum value, const std::pair<std::string_view, Enum> (&table)[N]) {
  for (const auto& [name, v] : table) {
    if (v == value) return name;
  }
  return "unknown";
}

void check_class(const nn::Network& net, std::size_t target_class) {
  if (target_class >= net.class_count()) {
    throw std::invalid_argument("saliency: class " + std::to_string(target_class) + " out of range for " +
                                std::to_string(net.class_count()) + " classes");
  }
}

SaliencyMap finish(Tensor raw, const nn::Network& net, std::string_view method, std::size_t target_class) {
  const auto& in = net.input_shape();
  SaliencyMap map;
  map.adapted = adapt_saliency(raw, in.height, in.width, Normalization::Range);
  map.raw = std::move(raw);
  map.method = std::string(method);
  map.target_class = target_class;
  return map;
}

SaliencyMap weighted_map(const nn::Network& net, const Tensor& features, std::span<const double> weights,
                         std::string_view method, std::size_t target_class) {
  return finish(relu(combine_channels(features, weights)), net, method, target_class);
}

}  // namespace

std::string_view to_string(Normalization n) { return name_of(n, kNormalizations); }
std::string_view to_string(Objective o) { return name_of(o, kObjectives); }
std::string_view to_string(Selector s) { return name_of(s, kSelectors); }
std::string_view to_string(Method m) { return name_of(m, kMethods); }
Normalization parse_normalization(std::string_view text) { return parse_enum(text, kNormalizations, "normalization"); }
Objective parse_objective(std::string_view text) { return parse_enum(text, kObjectives, "objective"); }
Selector parse_selector(std::string_view text) { return parse_enum(text, kSelectors, "selector"); }
Method parse_method(std::string_view text) { return parse_enum(text, kMethods, "method"); }

std::vector<Method> all_methods() {
  std::vector<Method> out;
  for (const auto& entry : kMethods) out.push_back(entry.second);
  return out;
}

// ---------------------------------------------------------------------------

ad::Var adapt_saliency(ad::Var raw, std::size_t height, std::size_t width, Normalization normalization) {
  ad::Var up = ad::bilinear_upsample(raw, height, width);
  switch (normalization) {
    case Normalization::Range: return ad::range_normalize(up);
    case Normalization::Max: return ad::max_normalize(up);
    case Normalization::Sigmoid: return ad::sigmoid(up);
  }
  throw std::logic_error("adapt_saliency: bad normalization");
}

Tensor adapt_saliency(const Tensor& raw, std::size_t height, std::size_t width, Normalization normalization) {
  if (!raw.all_finite()) throw std::invalid_argument("adapt_saliency: non-finite value in saliency map");
  ad::Tape tape;
  return adapt_saliency(tape.constant(raw), height, width, normalization).value();
}

ad::Var apply_mask(ad::Var image, ad::Var mask) {
  const Shape& si = image.shape();
  const Shape& sm = mask.shape();
  if (si.size() != 3 || sm.size() != 2 || si[1] != sm[0] || si[2] != sm[1]) {
    throw std::invalid_argument("apply_mask: image " + opticam::to_string(si) + " and mask " + opticam::to_string(sm) +
                                " do not align");
  }
  ad::Var plane = ad::reshape(mask, Shape{1, sm[0], sm[1]});
  std::vector<ad::Var> copies(si[0], plane);
  return ad::mul(image, ad::concat(copies));
}

Tensor apply_mask(const Tensor& image, const Tensor& mask) {
  ad::Tape tape;
  return apply_mask(tape.constant(image), tape.constant(mask)).value();
}

Tensor combine_channels(const Tensor& features, std::span<const double> weights) {
  const Shape& s = features.shape();
  if (s.size() != 3 || s[0] != weights.size()) {
    throw std::invalid_argument("combine_channels: " + std::to_string(weights.size()) +
                                " weights for features " + opticam::to_string(s));
  }
  const std::size_t plane = s[1] * s[2];
  Tensor out(Shape{s[1], s[2]}, 0.0);
  for (std::size_t k = 0; k < s[0]; ++k) {
    for (std::size_t i = 0; i < plane; ++i) out[i] += weights[k] * features[k * plane + i];
  }
  return out;
}

Tensor relu(Tensor t) {
  for (auto& v : t.data()) v = v > 0.0 ? v : 0.0;
  return t;
}

// ---------------------------------------------------------------------------
// CAM family

ClassGradient class_gradient(const nn::Network& net, const Tensor& image, std::size_t target_class,
                             std::string_view layer) {
  check_class(net, target_class);
  ClassGradient out;
  out.features = net.features(image, layer);
  ad::Tape tape;
  ad::Var a = tape.variable(out.features);
  ad::Var logits = net.forward_from(layer, a);
  Tensor onehot(logits.shape(), 0.0);
  onehot[target_class] = 1.0;
  ad::Var score = ad::sum(ad::mul(logits, tape.constant(std::move(onehot))));
  tape.backward(score);
  out.logits = logits.value();
  out.gradient = tape.grad(a);
  return out;
}

std::vector<double> grad_cam_weights(const Tensor& gradient) {
  const Shape& s = gradient.shape();
  const std::size_t plane = s.at(1) * s.at(2);
  std::vector<double> w(s[0], 0.0);
  for (std::size_t k = 0; k < s[0]; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += gradient[k * plane + i];
    w[k] = total / static_cast<double>(plane);
  }
  return w;
}

std::vector<double> grad_cam_pp_weights(const Tensor& features, const Tensor& gradient) {
  if (features.shape() != gradient.shape() || features.rank() != 3) {
    throw std::invalid_argument("grad_cam_pp_weights: features " + opticam::to_string(features.shape()) + " vs gradient " +
                                opticam::to_string(gradient.shape()));
  }
  const Shape& s = features.shape();
  const std::size_t plane = s[1] * s[2];
  std::vector<double> w(s[0], 0.0);
  for (std::size_t k = 0; k < s[0]; ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mass += features[k * plane + i];
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double g = gradient[k * plane + i];
      const double g2 = g * g;
      const double denom = 2.0 * g2 + mass * g2 * g;
      const double alpha = denom != 0.0 ? g2 / denom : 0.0;
      total += alpha * (g > 0.0 ? g : 0.0);
    }
    w[k] = total;
  }
  return w;
}

std::vector<double> xgrad_cam_weights(const Tensor& features, const Tensor& gradient) {
  if (features.shape() != gradient.shape() || features.rank() != 3) {
    throw std::invalid_argument("xgrad_cam_weights: features " + opticam::to_string(features.shape()) + " vs gradient " +
                                opticam::to_string(gradient.shape()));
  }
  const Shape& s = features.shape();
  const std::size_t plane = s[1] * s[2];
  std::vector<double> w(s[0], 0.0);
  for (std::size_t k = 0; k < s[0]; ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mass += features[k * plane + i];
    if (mass == 0.0) continue;
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += features[k * plane + i] * gradient[k * plane + i];
    w[k] = total / mass;
  }
  return w;
}

SaliencyMap cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer) {
  check_class(net, target_class);
  if (layer != net.final_feature_layer()) {
    throw std::invalid_argument("cam: layer '" + std::string(layer) + "' is not the final feature layer '" +
                                net.final_feature_layer() + "'");
  }
  const auto& head = net.layers().back();
  if (head.kind != nn::LayerKind::Linear) throw std::invalid_argument("cam: network does not end in GAP -> linear");
  const Tensor features = net.features(image, layer);
  const Tensor& weight = head.params.at(0);
  const std::size_t channels = weight.dim(1);
  std::vector<double> w(weight.data().begin() + static_cast<std::ptrdiff_t>(target_class * channels),
                        weight.data().begin() + static_cast<std::ptrdiff_t>((target_class + 1) * channels));
  return weighted_map(net, features, w, "cam", target_class);
}

SaliencyMap grad_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer) {
  const ClassGradient cg = class_gradient(net, image, target_class, layer);
  return weighted_map(net, cg.features, grad_cam_weights(cg.gradient), "grad-cam", target_class);
}

SaliencyMap grad_cam_pp(const nn::Network& net, const Tensor& image, std::size_t target_class,
                        std::string_view layer) {
  ClassGradient cg = class_gradient(net, image, target_class, layer);
  // d exp(y_c)/dA = exp(y_c) dy_c/dA, shifted by the max logit against overflow.
  const double peak = *std::max_element(cg.logits.data().begin(), cg.logits.data().end());
  const double scale = std::exp(cg.logits[target_class] - peak);
  for (auto& g : cg.gradient.data()) g *= scale;
  return weighted_map(net, cg.features, grad_cam_pp_weights(cg.features, cg.gradient), "grad-cam++", target_class);
}

SaliencyMap xgrad_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer) {
  const ClassGradient cg = class_gradient(net, image, target_class, layer);
  return weighted_map(net, cg.features, xgrad_cam_weights(cg.features, cg.gradient), "xgrad-cam", target_class);
}

std::vector<double> score_cam_scores(const nn::Network& net, const Tensor& image, std::size_t target_class,
                                     std::string_view layer) {
  check_class(net, target_class);
  const Tensor features = net.features(image, layer);
  const auto& in = net.input_shape();
  const double baseline = net.logits(Tensor(image.shape(), 0.0))[target_class];
  const std::size_t channels = features.dim(0);
  const std::size_t plane = features.dim(1) * features.dim(2);
  std::vector<double> u(channels);
  for (std::size_t k = 0; k < channels; ++k) {
    Tensor channel(Shape{features.dim(1), features.dim(2)},
                   std::vector<double>(features.data().begin() + static_cast<std::ptrdiff_t>(k * plane),
                                       features.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * plane)));
    const Tensor mask = adapt_saliency(channel, in.height, in.width, Normalization::Range);
    u[k] = net.logits(apply_mask(image, mask))[target_class] - baseline;
  }
  return u;
}

SaliencyMap score_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer) {
  const auto u = score_cam_scores(net, image, target_class, layer);
  const Tensor features = net.features(image, layer);
  return weighted_map(net, features, softmax(u), "score-cam", target_class);
}

std::vector<double> ablation_cam_weights(const nn::Network& net, const Tensor& image, std::size_t target_class,
                                         std::string_view layer) {
  check_class(net, target_class);
  const nn::FeatureForward base = nn::forward_with_features(net, image, layer);
  const double score = base.logits[target_class];
  const std::size_t channels = base.features.dim(0);
  const std::size_t plane = base.features.dim(1) * base.features.dim(2);
  std::vector<double> w(channels);
  for (std::size_t k = 0; k < channels; ++k) {
    Tensor ablated = base.features;
    std::fill(ablated.data().begin() + static_cast<std::ptrdiff_t>(k * plane),
              ablated.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * plane), 0.0);
    const double drop = score - net.logits_from_features(layer, ablated)[target_class];
    w[k] = score != 0.0 ? drop / score : drop;
  }
  return w;
}

SaliencyMap ablation_cam(const nn::Network& net, const Tensor& image, std::size_t target_class,
                         std::string_view layer) {
  const auto w = ablation_cam_weights(net, image, target_class, layer);
  return weighted_map(net, net.features(image, layer), w, "ablation-cam", target_class);
}

SaliencyMap fake_cam(std::size_t height, std::size_t width) {
  Tensor map(Shape{height, width}, 1.0);
  map.at(0, 0) = 0.0;
  return SaliencyMap{map, map, "fake-cam", 0};
}

double detail::unsoftmaxed_objective(const nn::Network& net, const Tensor& image, const Tensor& features,
                                     std::size_t target_class, std::span<const double> weights) {
  const auto& in = net.input_shape();
  const Tensor mask = adapt_saliency(combine_channels(features, weights), in.height, in.width, Normalization::Range);
  return net.logits(apply_mask(image, mask))[target_class];
}

SaliencyMap explain(Method method, const nn::Network& net, const Tensor& image, std::size_t target_class,
                    std::string_view layer, const OptiConfig& config) {
  switch (method) {
    case Method::Cam: return cam(net, image, target_class, layer);
    case Method::GradCam: return grad_cam(net, image, target_class, layer);
    case Method::GradCamPP: return grad_cam_pp(net, image, target_class, layer);
    case Method::XGradCam: return xgrad_cam(net, image, target_class, layer);
    case Method::ScoreCam: return score_cam(net, image, target_class, layer);
    case Method::AblationCam: return ablation_cam(net, image, target_class, layer);
    case Method::FakeCam: {
      SaliencyMap map = fake_cam(net.input_shape().height, net.input_shape().width);
      map.target_class = target_class;
      return map;
    }
    case Method::OptiCam: return opti_cam(net, image, target_class, layer, config).map;
  }
  throw std::logic_error("explain: bad method");
}

}  // namespace opticam::saliency
