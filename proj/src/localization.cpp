#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "opticam/metrics.hpp"

namespace opticam::metrics {

double iou(const BBox& a, const BBox& b) {
  const std::size_t ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const std::size_t ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  if (ix0 > ix1 || iy0 > iy1) return 0.0;
  const double inter = static_cast<double>((ix1 - ix0 + 1) * (iy1 - iy0 + 1));
  return inter / (static_cast<double>(a.area() + b.area()) - inter);
}

BBox largest_component_box(std::span<const unsigned char> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw std::invalid_argument("largest_component_box: mask size mismatch");
  std::vector<int> label(mask.size(), -1);
  std::vector<std::size_t> stack;
  BBox best{0, 0, width - 1, height - 1, 0};
  std::size_t best_size = 0;
  int next_label = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    BBox box{start % width, start / width, start % width, start / width, 0};
    std::size_t size = 0;
    label[start] = next_label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t y = p / width, x = p % width;
      box.x0 = std::min(box.x0, x);
      box.x1 = std::max(box.x1, x);
      box.y0 = std::min(box.y0, y);
      box.y1 = std::max(box.y1, y);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
          const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(height) || nx >= static_cast<std::ptrdiff_t>(width)) {
            continue;
          }
          const std::size_t q = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
          if (mask[q] && label[q] < 0) {
            label[q] = next_label;
            stack.push_back(q);
          }
        }
      }
    }
    ++next_label;
    if (size > best_size) {
      best_size = size;
      best = box;
    }
  }
  return best;
}

BBox threshold_bbox(const Tensor& adapted_map, double threshold) {
  if (adapted_map.rank() != 2) throw std::invalid_argument("threshold_bbox: expected a 2-D map");
  std::vector<unsigned char> mask(adapted_map.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = adapted_map[i] > threshold ? 1 : 0;
  return largest_component_box(mask, adapted_map.dim(0), adapted_map.dim(1));
}

BBox predicted_bbox(const Tensor& adapted_map) {
  double total = 0.0;
  for (double v : adapted_map.data()) total += v;
  return threshold_bbox(adapted_map, total / static_cast<double>(adapted_map.size()));
}

double energy_pointing(const Tensor& adapted_map, std::span<const BBox> gt_boxes) {
  const std::size_t width = adapted_map.dim(1);
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < adapted_map.size(); ++i) {
    const double v = adapted_map[i];
    total += v;
    const std::size_t x = i % width, y = i / width;
    if (std::any_of(gt_boxes.begin(), gt_boxes.end(), [&](const BBox& b) { return b.contains(x, y); })) inside += v;
  }
  return total > 0.0 ? inside / total : 0.0;
}

LocalizationScores localization_suite(const Tensor& adapted_map, std::span<const BBox> gt_boxes,
                                      std::size_t true_class, std::size_t predicted_class, double p_true) {
  if (gt_boxes.empty()) throw std::invalid_argument("localization_suite: no ground-truth boxes");
  if (adapted_map.rank() != 2) throw std::invalid_argument("localization_suite: expected a 2-D map");
  const std::size_t height = adapted_map.dim(0), width = adapted_map.dim(1);
  const Tensor union_mask = box_indicator(height, width, gt_boxes);

  LocalizationScores s;
  const BBox predicted = predicted_bbox(adapted_map);
  double best = 0.0;
  for (const auto& b : gt_boxes) best = std::max(best, iou(b, predicted));
  s.le = 1.0 - best;
  s.om = 1.0 - best * (predicted_class == true_class ? 1.0 : 0.0);

  double inside = 0.0, total = 0.0, union_size = 0.0;
  for (std::size_t i = 0; i < adapted_map.size(); ++i) {
    total += adapted_map[i];
    inside += adapted_map[i] * union_mask[i];
    union_size += union_mask[i];
  }
  s.precision = total > 0.0 ? inside / total : 0.0;
  s.recall = inside / union_size;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;

  auto values = adapted_map.data();
  const auto peak = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  s.sp = union_mask[peak] > 0.0 ? 1.0 : 0.0;
  s.ep = energy_pointing(adapted_map, gt_boxes);

  const double area_fraction = static_cast<double>(predicted.area()) / static_cast<double>(height * width);
  s.sm = std::log(std::max(0.05, area_fraction)) - std::log(p_true);
  return s;
}

const std::vector<double>& default_box_etas() {
  static const std::vector<double> etas = [] {
    std::vector<double> v;
    for (int i = 1; i <= 19; ++i) v.push_back(0.05 * i);
    return v;
  }();
  return etas;
}

const std::vector<double>& default_box_deltas() {
  static const std::vector<double> deltas{0.3, 0.5, 0.7};
  return deltas;
}

std::vector<std::vector<double>> box_hits(const Tensor& adapted_map, std::span<const BBox> gt_boxes,
                                          std::span<const double> etas, std::span<const double> deltas) {
  if (gt_boxes.empty()) throw std::invalid_argument("box_hits: no ground-truth boxes");
  if (etas.empty() || deltas.empty()) throw std::invalid_argument("box_hits: empty threshold grid");
  std::vector<std::vector<double>> hits(etas.size(), std::vector<double>(deltas.size(), 0.0));
  for (std::size_t e = 0; e < etas.size(); ++e) {
    const BBox box = threshold_bbox(adapted_map, etas[e]);
    double best = 0.0;
    for (const auto& b : gt_boxes) best = std::max(best, iou(b, box));
    for (std::size_t d = 0; d < deltas.size(); ++d) hits[e][d] = best >= deltas[d] ? 1.0 : 0.0;
  }
  return hits;
}

double box_accuracy(std::span<const std::vector<std::vector<double>>> per_image_hits) {
  if (per_image_hits.empty()) throw std::invalid_argument("box_accuracy: no images");
  const std::size_t n_eta = per_image_hits[0].size();
  const std::size_t n_delta = per_image_hits[0].at(0).size();
  double total = 0.0;
  for (std::size_t d = 0; d < n_delta; ++d) {
    double best = 0.0;
    for (std::size_t e = 0; e < n_eta; ++e) {
      double mean = 0.0;
      for (const auto& hits : per_image_hits) mean += hits.at(e).at(d);
      best = std::max(best, mean / static_cast<double>(per_image_hits.size()));
    }
    total += best;
  }
  return total / static_cast<double>(n_delta) * 100.0;
}

double box_accuracy(const Tensor& adapted_map, std::span<const BBox> gt_boxes, std::span<const double> etas,
                    std::span<const double> deltas) {
  const std::vector<std::vector<std::vector<double>>> single{box_hits(adapted_map, gt_boxes, etas, deltas)};
  return box_accuracy(single);
}

}  // namespace opticam::metrics
