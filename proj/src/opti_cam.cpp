#include <cmath>
#include <stdexcept>
#include <string>

#include "opticam/saliency.hpp"

namespace opticam::saliency {

namespace {

ad::Var select_class(ad::Var logits, std::size_t target_class, Selector selector) {
  Tensor onehot(logits.shape(), 0.0);
  onehot[target_class] = 1.0;
  ad::Var scores = selector == Selector::Probability ? ad::softmax(logits) : logits;
  return ad::sum(ad::mul(scores, logits.tape().constant(std::move(onehot))));
}

}  // namespace

std::vector<double> softmax(std::span<const double> u) {
  if (u.empty()) return {};
  ad::Tape tape;
  const Tensor out = ad::softmax(tape.constant(Tensor::vector({u.begin(), u.end()}))).value();
  return out.values();
}

void OptiConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("opti-cam: learning rate must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("opti-cam: max_iterations must be >= 1");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("opti-cam: tolerance must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_epsilon > 0.0)) {
    throw std::invalid_argument("opti-cam: invalid Adam hyperparameters");
  }
}

OptiObjective::OptiObjective(const nn::Network& net, const Tensor& image, std::size_t target_class,
                             std::string_view layer, const OptiConfig& config)
    : net_(net),
      image_(image),
      target_class_(target_class),
      objective_(config.objective),
      normalization_(config.normalization),
      selector_(config.selector) {
  if (target_class >= net.class_count()) {
    throw std::invalid_argument("opti-cam: class " + std::to_string(target_class) + " out of range");
  }
  features_ = net.features(image, layer);
  channels_ = features_.dim(0);
  if (channels_ < 2) throw std::invalid_argument("opti-cam: hook layer needs at least 2 channels");
  flat_features_ = features_.reshaped(Shape{channels_, features_.dim(1) * features_.dim(2)});
  if (objective_ == Objective::Diff || objective_ == Objective::IODiff) {
    ad::Tape tape;
    original_score_ = select_class(net.forward(tape.constant(image_)), target_class_, selector_).value().item();
  }
}

Tensor OptiObjective::saliency(std::span<const double> u) const {
  return combine_channels(features_, softmax(u));
}

double OptiObjective::value(std::span<const double> u) const { return evaluate(u, nullptr); }

double OptiObjective::value_and_gradient(std::span<const double> u, std::vector<double>& gradient) const {
  return evaluate(u, &gradient);
}

double OptiObjective::evaluate(std::span<const double> u, std::vector<double>* gradient) const {
  if (u.size() != channels_) {
    throw std::invalid_argument("opti-cam: u has " + std::to_string(u.size()) + " entries, layer has " +
                                std::to_string(channels_) + " channels");
  }
  ad::Tape tape;
  ad::Var uv = gradient ? tape.variable(Tensor::vector({u.begin(), u.end()}))
                        : tape.constant(Tensor::vector({u.begin(), u.end()}));
  ad::Var w = ad::reshape(ad::softmax(uv), Shape{1, channels_});
  ad::Var s = ad::reshape(ad::matmul(w, tape.constant(flat_features_)), Shape{features_.dim(1), features_.dim(2)});
  const auto& in = net_.input_shape();
  ad::Var mask = adapt_saliency(s, in.height, in.width, normalization_);
  ad::Var image = tape.constant(image_);

  auto score = [&](ad::Var m) {
    return select_class(net_.forward(apply_mask(image, m)), target_class_, selector_);
  };
  auto distance = [&](ad::Var g) {
    return ad::abs(ad::sub(tape.constant(Tensor::scalar(original_score_)), g));
  };

  ad::Var objective;
  switch (objective_) {
    case Objective::Mask: objective = score(mask); break;
    case Objective::Diff: objective = ad::mul_scalar(distance(score(mask)), -1.0); break;
    case Objective::IOMask: objective = ad::sub(score(mask), score(ad::rsub_scalar(1.0, mask))); break;
    case Objective::IODiff:
      objective = ad::sub(distance(score(ad::rsub_scalar(1.0, mask))), distance(score(mask)));
      break;
  }
  const double value = objective.value().item();
  if (gradient) {
    tape.backward(objective);
    const Tensor& g = tape.grad(uv);
    gradient->assign(g.data().begin(), g.data().end());
  }
  return value;
}

OptiResult opti_cam(const nn::Network& net, const Tensor& image, std::size_t target_class, std::string_view layer,
                    const OptiConfig& config) {
  config.validate();
  const OptiObjective objective(net, image, target_class, layer, config);
  const std::size_t channels = objective.channels();

  std::vector<double> u = config.init.empty() ? std::vector<double>(channels, 0.0) : config.init;
  if (u.size() != channels) {
    throw std::invalid_argument("opti-cam: init has " + std::to_string(u.size()) + " entries, layer has " +
                                std::to_string(channels) + " channels");
  }
  std::vector<double> m(channels, 0.0), v(channels, 0.0), grad;
  OptiResult result;
  double previous = 0.0;
  double beta1_power = 1.0, beta2_power = 1.0;

  for (std::size_t t = 0; t <= config.max_iterations; ++t) {
    const bool last = t == config.max_iterations;
    const double value = last ? objective.value(u) : objective.value_and_gradient(u, grad);
    if (!std::isfinite(value)) {
      throw std::runtime_error("opti-cam: objective became non-finite at iteration " + std::to_string(t));
    }
    result.trace.push_back(TracePoint{t, value});
    if (t == 0 || value > result.best_value) {
      result.best_value = value;
      result.best_iteration = t;
      result.u = u;
    }
    if (last) break;
    if (t > 0 && std::fabs(value - previous) < config.tolerance) break;
    previous = value;

    // Adam ascent step.
    beta1_power *= config.adam_beta1;
    beta2_power *= config.adam_beta2;
    for (std::size_t k = 0; k < channels; ++k) {
      m[k] = config.adam_beta1 * m[k] + (1.0 - config.adam_beta1) * grad[k];
      v[k] = config.adam_beta2 * v[k] + (1.0 - config.adam_beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / (1.0 - beta1_power);
      const double v_hat = v[k] / (1.0 - beta2_power);
      u[k] += config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
    }
  }

  result.weights = softmax(result.u);
  const auto& in = net.input_shape();
  Tensor raw = combine_channels(objective.features(), result.weights);
  result.map.adapted = adapt_saliency(raw, in.height, in.width, config.normalization);
  result.map.raw = std::move(raw);
  result.map.method = "opti-cam";
  result.map.target_class = target_class;
  return result;
}

}  // namespace opticam::saliency
