#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opticam/dataset.hpp"
#include "opticam/metrics.hpp"
#include "opticam/network.hpp"
#include "opticam/saliency.hpp"

namespace opticam::harness {

struct MetricSelection {
  bool classification = true;  // AD, AG, AI
  bool insertion_deletion = false;
  bool localization = false;
  bool selectivity = false;

  /// Comma list of ad, ag, ai, id, loc, sel.
  static MetricSelection parse(std::string_view text);
  std::string to_string() const;
};

struct RunConfig {
  saliency::Method method = saliency::Method::OptiCam;
  std::string layer = std::string(nn::kDefaultLayer);
  saliency::OptiConfig opti;
  MetricSelection metrics;
  /// 0 means one step per image row (side length).
  std::size_t id_steps = 0;
  bool id_track_true_class = false;
  std::vector<double> box_etas = metrics::default_box_etas();
  std::vector<double> box_deltas = metrics::default_box_deltas();
  std::vector<double> alphas = metrics::default_alphas();
  std::uint64_t seed = 42;
  Split split = Split::Test;
  /// 0 means every image of the split.
  std::size_t limit = 0;
  /// Not part of the results; results are identical for any worker count.
  std::size_t workers = 1;

  void validate(const nn::Network& net) const;
};

struct ImageResult {
  std::size_t image_id = 0;
  metrics::EvalRecord record;
  std::optional<metrics::InsertionDeletion> id;
  std::optional<metrics::LocalizationScores> loc;
  std::vector<std::vector<double>> box_hits;
  std::vector<metrics::EvalRecord> selectivity;
  double seconds = 0.0;
};

struct EvaluationReport {
  RunConfig config;
  std::vector<ImageResult> images;
};

/// Runs `fn(i)` for i in [0, count) on `workers` threads. The first exception
/// is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

std::vector<const Sample*> select_images(const SyntheticDataset& data, Split split, std::size_t limit);

EvaluationReport run_evaluation(const RunConfig& config, const nn::Network& net, const SyntheticDataset& data);

struct Aggregate {
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::pair<double, std::vector<double>>> selectivity;  // alpha -> {AD, AG, AI}

  double get(std::string_view name) const;
};

Aggregate aggregate(const EvaluationReport& report);

std::string records_csv(const EvaluationReport& report);
std::string curves_csv(const EvaluationReport& report);
/// Deterministic: excludes wall-clock timing and the worker count.
std::string summary_json(const EvaluationReport& report);
std::string timing_json(const EvaluationReport& report);

/// Writes records.csv, summary.json, timing.json (and curves.csv when
/// insertion/deletion ran). Files appear via rename, never half-written.
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

/// Writes `bytes` to a sibling temp file, then renames it into place.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);
/// Records a one-line failure in dir/error.txt.
void write_error(const std::filesystem::path& dir, std::string_view message);

// ---------------------------------------------------------------------------

struct SanityRow {
  std::size_t stage = 0;
  double spearman = 0.0;
  double spearman_abs = 0.0;
  double ssim = 0.0;
  std::size_t images = 0;
};

/// Compares adapted maps of the configured method on progressively
/// randomized networks against the stage-0 maps.
std::vector<SanityRow> sanity_check(const RunConfig& config, const nn::Network& net, const SyntheticDataset& data,
                                    std::span<const std::size_t> stages, std::size_t image_count);
std::string sanity_csv(std::span<const SanityRow> rows);

struct AblationRow {
  saliency::Objective objective = saliency::Objective::Mask;
  saliency::Normalization normalization = saliency::Normalization::Range;
  double ad = 0.0, ag = 0.0, ai = 0.0;
};

std::vector<AblationRow> ablation_grid(const RunConfig& config, const nn::Network& net, const SyntheticDataset& data,
                                       std::span<const saliency::Objective> objectives,
                                       std::span<const saliency::Normalization> normalizations);
std::string ablation_csv(std::span<const AblationRow> rows);

// ---------------------------------------------------------------------------
// Saliency files: "SALV1 <h> <w>\n" then h*w little-endian f64, row-major.

std::string encode_salv(const Tensor& adapted);
Tensor decode_salv(std::string_view bytes);
/// P5, maxval 255, round(255 v).
std::string encode_pgm(const Tensor& adapted);

/// Writes the adapted map to `path` and a PGM preview next to it.
void export_saliency(const saliency::SaliencyMap& map, const std::filesystem::path& path);
Tensor import_saliency(const std::filesystem::path& path);

}  // namespace opticam::harness
