#include "opticam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "opticam/saliency.hpp"

namespace opticam::metrics {

namespace {

void require_records(std::span<const EvalRecord> records, const char* what) {
  if (records.empty()) throw std::invalid_argument(std::string(what) + ": empty record set");
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

double drop_term(const EvalRecord& r) { return r.p > r.o ? (r.p - r.o) / r.p : 0.0; }

double gain_term(const EvalRecord& r) { return r.o > r.p ? (r.o - r.p) / (1.0 - r.p) : 0.0; }

double average_drop(std::span<const EvalRecord> records) {
  require_records(records, "average_drop");
  double total = 0.0;
  for (const auto& r : records) total += drop_term(r);
  return total / static_cast<double>(records.size()) * 100.0;
}

double average_gain(std::span<const EvalRecord> records) {
  require_records(records, "average_gain");
  double total = 0.0;
  for (const auto& r : records) total += gain_term(r);
  return total / static_cast<double>(records.size()) * 100.0;
}

double average_increase(std::span<const EvalRecord> records) {
  require_records(records, "average_increase");
  std::size_t count = 0;
  for (const auto& r : records) {
    if (r.p < r.o) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(records.size()) * 100.0;
}

EvalRecord evaluate_mask(const nn::Network& net, const Tensor& original_probabilities, const Tensor& image,
                         const Tensor& mask, std::size_t true_class, std::size_t image_id) {
  if (true_class >= net.class_count()) throw std::invalid_argument("evaluate_mask: class out of range");
  const Tensor masked = net.probabilities(saliency::apply_mask(image, mask));
  EvalRecord r;
  r.image_id = image_id;
  r.true_class = true_class;
  r.p = original_probabilities[true_class];
  r.o = masked[true_class];
  r.predicted_class = nn::argmax(original_probabilities);
  r.p_predicted = original_probabilities[r.predicted_class];
  return r;
}

EvalRecord evaluate_mask(const nn::Network& net, const Tensor& image, const Tensor& mask, std::size_t true_class,
                         std::size_t image_id) {
  return evaluate_mask(net, net.probabilities(image), image, mask, true_class, image_id);
}

// ---------------------------------------------------------------------------

std::vector<double> gaussian_kernel(std::size_t kernel_size, double sigma) {
  if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("gaussian_kernel: size must be odd");
  const auto radius = static_cast<std::ptrdiff_t>(kernel_size / 2);
  std::vector<double> k(kernel_size, 0.0);
  if (!(sigma > 0.0)) {
    k[static_cast<std::size_t>(radius)] = 1.0;
    return k;
  }
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double x = static_cast<double>(i);
    const double w = std::exp(-x * x / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (auto& w : k) w /= total;
  return k;
}

Tensor gaussian_blur(const Tensor& image, std::size_t kernel_size, double sigma) {
  if (image.rank() != 3) throw std::invalid_argument("gaussian_blur: expected [C,H,W], got " + to_string(image.shape()));
  const auto kernel = gaussian_kernel(kernel_size, sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel_size / 2);
  const std::size_t channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  Tensor rows(image.shape()), out(image.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          acc += kernel[static_cast<std::size_t>(t + radius)] *
                 image.at(c, y, reflect(static_cast<std::ptrdiff_t>(x) + t, width));
        }
        rows.at(c, y, x) = acc;
      }
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          acc += kernel[static_cast<std::size_t>(t + radius)] *
                 rows.at(c, reflect(static_cast<std::ptrdiff_t>(y) + t, height), x);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

std::vector<std::size_t> saliency_order(const Tensor& adapted_map) {
  std::vector<std::size_t> order(adapted_map.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto v = adapted_map.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

InsertionDeletion insertion_deletion(const nn::Network& net, const Tensor& image, const Tensor& adapted_map,
                                     std::size_t steps, std::optional<std::size_t> tracked_class) {
  net.check_image(image);
  const std::size_t height = image.dim(1), width = image.dim(2);
  if (adapted_map.shape() != Shape{height, width}) {
    throw std::invalid_argument("insertion_deletion: map " + to_string(adapted_map.shape()) + " vs image " +
                                to_string(image.shape()));
  }
  const std::size_t pixels = height * width;
  if (steps < 2) throw std::invalid_argument("insertion_deletion: steps must be >= 2");
  if (steps > pixels) throw std::invalid_argument("insertion_deletion: more steps than pixels");

  InsertionDeletion out;
  out.tracked_class = tracked_class ? *tracked_class : nn::argmax(net.logits(image));
  if (out.tracked_class >= net.class_count()) throw std::invalid_argument("insertion_deletion: class out of range");

  const auto order = saliency_order(adapted_map);
  const std::size_t channels = image.dim(0);
  Tensor deleted = image;
  Tensor inserted = gaussian_blur(image, kBlurKernel, kBlurSigma);
  std::size_t done = 0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const std::size_t target = (k * pixels + steps - 1) / steps;  // ceil(k * HW / steps)
    for (; done < target; ++done) {
      const std::size_t p = order[done];
      for (std::size_t c = 0; c < channels; ++c) {
        deleted[c * pixels + p] = 0.0;
        inserted[c * pixels + p] = image[c * pixels + p];
      }
    }
    const double fraction = static_cast<double>(done) / static_cast<double>(pixels);
    out.deletion.fractions.push_back(fraction);
    out.insertion.fractions.push_back(fraction);
    out.deletion.probabilities.push_back(net.probabilities(deleted)[out.tracked_class]);
    out.insertion.probabilities.push_back(net.probabilities(inserted)[out.tracked_class]);
  }
  auto score = [](const Curve& c) {
    return std::accumulate(c.probabilities.begin(), c.probabilities.end(), 0.0) /
           static_cast<double>(c.probabilities.size()) * 100.0;
  };
  out.insertion_score = score(out.insertion);
  out.deletion_score = score(out.deletion);
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<double>& default_alphas() {
  static const std::vector<double> alphas{0.01, 0.05, 0.1, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0};
  return alphas;
}

std::vector<EvalRecord> selectivity_sweep(const nn::Network& net, const Tensor& image, const Tensor& adapted_map,
                                          std::size_t true_class, std::span<const double> alphas,
                                          std::size_t image_id) {
  const Tensor original = net.probabilities(image);
  std::vector<EvalRecord> out;
  for (double alpha : alphas) {
    if (!(alpha > 0.0)) throw std::invalid_argument("selectivity_sweep: exponents must be positive");
    Tensor mask = adapted_map;
    for (auto& v : mask.data()) v = std::pow(v, alpha);
    out.push_back(evaluate_mask(net, original, image, mask, true_class, image_id));
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor box_indicator(std::size_t height, std::size_t width, std::span<const BBox> boxes) {
  Tensor out(Shape{height, width}, 0.0);
  for (const auto& b : boxes) {
    if (b.x1 >= width || b.y1 >= height || b.x0 > b.x1 || b.y0 > b.y1) {
      throw std::invalid_argument("box_indicator: box outside the image");
    }
    for (std::size_t y = b.y0; y <= b.y1; ++y) {
      for (std::size_t x = b.x0; x <= b.x1; ++x) out.at(y, x) = 1.0;
    }
  }
  return out;
}

BoxStudyMasks box_study_masks(const Tensor& adapted_map, std::span<const BBox> boxes) {
  if (adapted_map.rank() != 2) throw std::invalid_argument("box_study_masks: expected a 2-D map");
  BoxStudyMasks m;
  m.saliency = adapted_map;
  m.box = box_indicator(adapted_map.dim(0), adapted_map.dim(1), boxes);
  m.complement = m.box;
  for (auto& v : m.complement.data()) v = 1.0 - v;
  m.box_and_saliency = adapted_map;
  m.saliency_minus_box = adapted_map;
  for (std::size_t i = 0; i < adapted_map.size(); ++i) {
    m.box_and_saliency[i] = std::min(adapted_map[i], m.box[i]);
    m.saliency_minus_box[i] = std::min(adapted_map[i], m.complement[i]);
  }
  return m;
}

BoxStudyRecords box_mask_records(const nn::Network& net, std::span<const Tensor> images,
                                 std::span<const std::size_t> labels,
                                 std::span<const std::vector<BBox>> gt_boxes, std::span<const Tensor> maps) {
  if (images.size() != labels.size() || images.size() != gt_boxes.size() || images.size() != maps.size()) {
    throw std::invalid_argument("box_mask_records: input lists differ in length");
  }
  BoxStudyRecords out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor original = net.probabilities(images[i]);
    const BoxStudyMasks m = box_study_masks(maps[i], gt_boxes[i]);
    out.saliency.push_back(evaluate_mask(net, original, images[i], m.saliency, labels[i], i));
    out.box_and_saliency.push_back(evaluate_mask(net, original, images[i], m.box_and_saliency, labels[i], i));
    out.saliency_minus_box.push_back(evaluate_mask(net, original, images[i], m.saliency_minus_box, labels[i], i));
    out.box.push_back(evaluate_mask(net, original, images[i], m.box, labels[i], i));
    out.complement.push_back(evaluate_mask(net, original, images[i], m.complement, labels[i], i));
  }
  return out;
}

}  // namespace opticam::metrics
