#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "opticam/network.hpp"
#include "opticam/tensor.hpp"

namespace opticam::metrics {

// ---------------------------------------------------------------------------
// Classification metrics (masking the input with the adapted saliency map)

struct EvalRecord {
  std::size_t image_id = 0;
  std::size_t true_class = 0;
  double p = 0.0;  // original-image probability of the true class
  double o = 0.0;  // masked-image probability of the true class
  std::size_t predicted_class = 0;
  double p_predicted = 0.0;
};

/// Mean of [p - o]_+ / p, as a percentage. Lower is better.
double average_drop(std::span<const EvalRecord> records);
/// Mean of [o - p]_+ / (1 - p), as a percentage. Higher is better.
double average_gain(std::span<const EvalRecord> records);
/// Percentage of records with p < o.
double average_increase(std::span<const EvalRecord> records);

double drop_term(const EvalRecord& r);
double gain_term(const EvalRecord& r);

/// Probabilities of the original and of image . mask for `true_class`.
EvalRecord evaluate_mask(const nn::Network& net, const Tensor& image, const Tensor& mask, std::size_t true_class,
                         std::size_t image_id = 0);
/// Same, reusing already computed original-image probabilities.
EvalRecord evaluate_mask(const nn::Network& net, const Tensor& original_probabilities, const Tensor& image,
                         const Tensor& mask, std::size_t true_class, std::size_t image_id = 0);

// ---------------------------------------------------------------------------
// Insertion / deletion

struct Curve {
  std::vector<double> fractions;
  std::vector<double> probabilities;
};

struct InsertionDeletion {
  Curve insertion;
  Curve deletion;
  double insertion_score = 0.0;
  double deletion_score = 0.0;
  std::size_t tracked_class = 0;
};

/// Normalized 1-D Gaussian of odd length.
std::vector<double> gaussian_kernel(std::size_t kernel_size, double sigma);
/// Separable blur of every channel of [C,H,W] with reflect padding.
Tensor gaussian_blur(const Tensor& image, std::size_t kernel_size, double sigma);

/// Pixel indices by descending saliency; ties by row-major index.
std::vector<std::size_t> saliency_order(const Tensor& adapted_map);

inline constexpr std::size_t kBlurKernel = 11;
inline constexpr double kBlurSigma = 11.0 / 4.0;

/// Tracks the original predicted class unless `tracked_class` is given.
InsertionDeletion insertion_deletion(const nn::Network& net, const Tensor& image, const Tensor& adapted_map,
                                     std::size_t steps, std::optional<std::size_t> tracked_class = std::nullopt);

// ---------------------------------------------------------------------------
// Selectivity

const std::vector<double>& default_alphas();

std::vector<EvalRecord> selectivity_sweep(const nn::Network& net, const Tensor& image, const Tensor& adapted_map,
                                          std::size_t true_class, std::span<const double> alphas,
                                          std::size_t image_id = 0);

// ---------------------------------------------------------------------------
// Localization

/// Inclusive pixel bounds.
struct BBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t label = 0;

  std::size_t width() const { return x1 - x0 + 1; }
  std::size_t height() const { return y1 - y0 + 1; }
  std::size_t area() const { return width() * height(); }
  bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

/// Box of the largest 8-connected component of `mask` (row-major [H,W]);
/// ties go to the component whose first pixel comes first in raster order.
/// An empty mask yields the full-image box.
BBox largest_component_box(std::span<const unsigned char> mask, std::size_t height, std::size_t width);
/// Component box of {p : S_p > threshold}.
BBox threshold_bbox(const Tensor& adapted_map, double threshold);
/// Component box of {p : S_p > mean S}.
BBox predicted_bbox(const Tensor& adapted_map);

struct LocalizationScores {
  double om = 0.0;  // [0,1]
  double le = 0.0;  // [0,1]
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double sp = 0.0;  // 0 or 1
  double ep = 0.0;
  double sm = 0.0;
};

/// `p_true` is the original-image probability of the true class (for SM).
LocalizationScores localization_suite(const Tensor& adapted_map, std::span<const BBox> gt_boxes,
                                      std::size_t true_class, std::size_t predicted_class, double p_true);

double energy_pointing(const Tensor& adapted_map, std::span<const BBox> gt_boxes);

const std::vector<double>& default_box_etas();
const std::vector<double>& default_box_deltas();

/// hits[e][d] for one image: 1 if the eta-threshold box reaches IoU >= delta.
std::vector<std::vector<double>> box_hits(const Tensor& adapted_map, std::span<const BBox> gt_boxes,
                                          std::span<const double> etas, std::span<const double> deltas);
/// Averages hits over images, takes the max over eta, then the mean over
/// delta. Percentage.
double box_accuracy(std::span<const std::vector<std::vector<double>>> per_image_hits);
double box_accuracy(const Tensor& adapted_map, std::span<const BBox> gt_boxes, std::span<const double> etas,
                    std::span<const double> deltas);

// ---------------------------------------------------------------------------
// Similarity (sanity check)

/// Average ranks (1-based), ties averaged.
std::vector<double> average_ranks(std::span<const double> values);
/// Spearman rank correlation; 0 when either side has zero variance.
double spearman_correlation(const Tensor& a, const Tensor& b);
double spearman_correlation_abs(const Tensor& a, const Tensor& b);
/// Single-window SSIM with L = 1.
double ssim(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Bounding-box masking study

Tensor box_indicator(std::size_t height, std::size_t width, std::span<const BBox> boxes);

struct BoxStudyMasks {
  Tensor saliency;
  Tensor box_and_saliency;
  Tensor saliency_minus_box;
  Tensor box;
  Tensor complement;
};

BoxStudyMasks box_study_masks(const Tensor& adapted_map, std::span<const BBox> boxes);

struct BoxStudyRecords {
  std::vector<EvalRecord> saliency;
  std::vector<EvalRecord> box_and_saliency;
  std::vector<EvalRecord> saliency_minus_box;
  std::vector<EvalRecord> box;
  std::vector<EvalRecord> complement;
};

BoxStudyRecords box_mask_records(const nn::Network& net, std::span<const Tensor> images,
                                 std::span<const std::size_t> labels,
                                 std::span<const std::vector<BBox>> gt_boxes, std::span<const Tensor> maps);

}  // namespace opticam::metrics
