#include "opticam/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace opticam::harness {

namespace {

using json = nlohmann::json;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double mean_of(const std::vector<ImageResult>& images, double (*get)(const ImageResult&)) {
  double total = 0.0;
  for (const auto& r : images) total += get(r);
  return total / static_cast<double>(images.size());
}

ImageResult evaluate_image(const RunConfig& config, const nn::Network& net, const Sample& sample) {
  const auto start = std::chrono::steady_clock::now();
  ImageResult out;
  out.image_id = sample.id;
  const saliency::SaliencyMap map =
      saliency::explain(config.method, net, sample.image, sample.label, config.layer, config.opti);
  const Tensor original = net.probabilities(sample.image);
  out.record = metrics::evaluate_mask(net, original, sample.image, map.adapted, sample.label, sample.id);
  if (config.metrics.insertion_deletion) {
    const std::size_t steps = config.id_steps ? config.id_steps : sample.image.dim(1);
    out.id = metrics::insertion_deletion(net, sample.image, map.adapted, steps,
                                         config.id_track_true_class ? std::optional(sample.label) : std::nullopt);
  }
  if (config.metrics.localization) {
    out.loc = metrics::localization_suite(map.adapted, sample.boxes, sample.label, out.record.predicted_class,
                                          out.record.p);
    out.box_hits = metrics::box_hits(map.adapted, sample.boxes, config.box_etas, config.box_deltas);
  }
  if (config.metrics.selectivity) {
    out.selectivity =
        metrics::selectivity_sweep(net, sample.image, map.adapted, sample.label, config.alphas, sample.id);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

json config_json(const RunConfig& c) {
  json j;
  j["method"] = std::string(saliency::to_string(c.method));
  j["layer"] = c.layer;
  if (c.method == saliency::Method::OptiCam) {
    j["objective"] = std::string(saliency::to_string(c.opti.objective));
    j["normalization"] = std::string(saliency::to_string(c.opti.normalization));
    j["selector"] = std::string(saliency::to_string(c.opti.selector));
    j["learning_rate"] = c.opti.learning_rate;
    j["max_iterations"] = c.opti.max_iterations;
    j["tolerance"] = c.opti.tolerance;
  }
  j["metrics"] = c.metrics.to_string();
  if (c.metrics.insertion_deletion) {
    j["id_steps"] = c.id_steps;
    j["id_track_true_class"] = c.id_track_true_class;
  }
  if (c.metrics.localization) {
    j["box_etas"] = c.box_etas;
    j["box_deltas"] = c.box_deltas;
  }
  if (c.metrics.selectivity) j["alphas"] = c.alphas;
  j["seed"] = c.seed;
  j["split"] = std::string(to_string(c.split));
  j["limit"] = c.limit;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

MetricSelection MetricSelection::parse(std::string_view text) {
  MetricSelection sel;
  sel.classification = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string_view item = text.substr(start, end - start);
    if (item == "ad" || item == "ag" || item == "ai") {
      sel.classification = true;
    } else if (item == "id") {
      sel.insertion_deletion = true;
    } else if (item == "loc") {
      sel.localization = true;
    } else if (item == "sel") {
      sel.selectivity = true;
    } else if (!item.empty()) {
      throw std::invalid_argument("unknown metric '" + std::string(item) + "'");
    }
    start = end + 1;
  }
  return sel;
}

std::string MetricSelection::to_string() const {
  std::string out;
  auto add = [&](const char* name) {
    if (!out.empty()) out += ",";
    out += name;
  };
  if (classification) add("ad,ag,ai");
  if (insertion_deletion) add("id");
  if (localization) add("loc");
  if (selectivity) add("sel");
  return out;
}

void RunConfig::validate(const nn::Network& net) const {
  net.hook_index(layer);
  if (method == saliency::Method::OptiCam) opti.validate();
  if (method == saliency::Method::Cam && layer != net.final_feature_layer()) {
    throw std::invalid_argument("cam requires the final feature layer '" + net.final_feature_layer() + "'");
  }
  if (metrics.insertion_deletion && id_steps == 1) throw std::invalid_argument("id steps must be >= 2");
  if (metrics.localization && (box_etas.empty() || box_deltas.empty())) {
    throw std::invalid_argument("box accuracy grids must be non-empty");
  }
  if (metrics.selectivity && alphas.empty()) throw std::invalid_argument("alpha list must be non-empty");
  if (workers == 0) throw std::invalid_argument("workers must be >= 1");
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<const Sample*> select_images(const SyntheticDataset& data, Split split, std::size_t limit) {
  auto images = data.split(split);
  if (limit && images.size() > limit) images.resize(limit);
  if (images.empty()) throw std::invalid_argument("no images in split '" + std::string(to_string(split)) + "'");
  return images;
}

EvaluationReport run_evaluation(const RunConfig& config, const nn::Network& net, const SyntheticDataset& data) {
  config.validate(net);
  if (data.class_count != net.class_count()) {
    throw std::invalid_argument("dataset has " + std::to_string(data.class_count) + " classes, network has " +
                                std::to_string(net.class_count()));
  }
  const auto images = select_images(data, config.split, config.limit);
  EvaluationReport report;
  report.config = config;
  report.images.resize(images.size());
  parallel_for(images.size(), config.workers,
               [&](std::size_t i) { report.images[i] = evaluate_image(config, net, *images[i]); });
  return report;
}

double Aggregate::get(std::string_view name) const {
  for (const auto& [key, value] : metrics) {
    if (key == name) return value;
  }
  throw std::out_of_range("aggregate: no metric '" + std::string(name) + "'");
}

Aggregate aggregate(const EvaluationReport& report) {
  Aggregate agg;
  const auto& images = report.images;
  if (images.empty()) throw std::invalid_argument("aggregate: empty report");
  const auto& sel = report.config.metrics;
  if (sel.classification) {
    std::vector<metrics::EvalRecord> records;
    for (const auto& r : images) records.push_back(r.record);
    agg.metrics.emplace_back("AD", metrics::average_drop(records));
    agg.metrics.emplace_back("AG", metrics::average_gain(records));
    agg.metrics.emplace_back("AI", metrics::average_increase(records));
  }
  if (sel.insertion_deletion) {
    agg.metrics.emplace_back("I", mean_of(images, [](const ImageResult& r) { return r.id->insertion_score; }));
    agg.metrics.emplace_back("D", mean_of(images, [](const ImageResult& r) { return r.id->deletion_score; }));
  }
  if (sel.localization) {
    agg.metrics.emplace_back("OM", 100.0 * mean_of(images, [](const ImageResult& r) { return r.loc->om; }));
    agg.metrics.emplace_back("LE", 100.0 * mean_of(images, [](const ImageResult& r) { return r.loc->le; }));
    agg.metrics.emplace_back("F1", 100.0 * mean_of(images, [](const ImageResult& r) { return r.loc->f1; }));
    std::vector<std::vector<std::vector<double>>> hits;
    for (const auto& r : images) hits.push_back(r.box_hits);
    agg.metrics.emplace_back("BoxAcc", metrics::box_accuracy(hits));
    agg.metrics.emplace_back("SP", 100.0 * mean_of(images, [](const ImageResult& r) { return r.loc->sp; }));
    agg.metrics.emplace_back("EP", 100.0 * mean_of(images, [](const ImageResult& r) { return r.loc->ep; }));
    agg.metrics.emplace_back("SM", mean_of(images, [](const ImageResult& r) { return r.loc->sm; }));
  }
  if (sel.selectivity) {
    for (std::size_t a = 0; a < report.config.alphas.size(); ++a) {
      std::vector<metrics::EvalRecord> records;
      for (const auto& r : images) records.push_back(r.selectivity.at(a));
      agg.selectivity.emplace_back(report.config.alphas[a],
                                   std::vector<double>{metrics::average_drop(records), metrics::average_gain(records),
                                                       metrics::average_increase(records)});
    }
  }
  return agg;
}

std::string records_csv(const EvaluationReport& report) {
  const auto& sel = report.config.metrics;
  std::ostringstream out;
  out << "image_id,label,predicted,p,o,drop,gain";
  if (sel.insertion_deletion) out << ",insertion,deletion";
  if (sel.localization) out << ",om,le,precision,recall,f1,sp,ep,sm";
  out << "\n";
  for (const auto& r : report.images) {
    const auto& rec = r.record;
    out << r.image_id << ',' << rec.true_class << ',' << rec.predicted_class << ',' << num(rec.p) << ','
        << num(rec.o) << ',' << num(metrics::drop_term(rec)) << ',' << num(metrics::gain_term(rec));
    if (sel.insertion_deletion) out << ',' << num(r.id->insertion_score) << ',' << num(r.id->deletion_score);
    if (sel.localization) {
      const auto& l = *r.loc;
      out << ',' << num(l.om) << ',' << num(l.le) << ',' << num(l.precision) << ',' << num(l.recall) << ','
          << num(l.f1) << ',' << num(l.sp) << ',' << num(l.ep) << ',' << num(l.sm);
    }
    out << "\n";
  }
  return out.str();
}

std::string curves_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "image_id,curve,step,fraction,probability\n";
  for (const auto& r : report.images) {
    if (!r.id) continue;
    auto emit = [&](const char* name, const metrics::Curve& c) {
      for (std::size_t k = 0; k < c.fractions.size(); ++k) {
        out << r.image_id << ',' << name << ',' << k << ',' << num(c.fractions[k]) << ','
            << num(c.probabilities[k]) << "\n";
      }
    };
    emit("insertion", r.id->insertion);
    emit("deletion", r.id->deletion);
  }
  return out.str();
}

std::string summary_json(const EvaluationReport& report) {
  const Aggregate agg = aggregate(report);
  json j;
  j["method"] = std::string(saliency::to_string(report.config.method));
  j["config"] = config_json(report.config);
  j["images"] = report.images.size();
  json m = json::object();
  for (const auto& [key, value] : agg.metrics) m[key] = value;
  j["metrics"] = m;
  if (!agg.selectivity.empty()) {
    json rows = json::array();
    for (const auto& [alpha, v] : agg.selectivity) rows.push_back({{"alpha", alpha}, {"AD", v[0]}, {"AG", v[1]}, {"AI", v[2]}});
    j["selectivity"] = rows;
  }
  return j.dump(2) + "\n";
}

std::string timing_json(const EvaluationReport& report) {
  double total = 0.0;
  for (const auto& r : report.images) total += r.seconds;
  json j;
  j["method"] = std::string(saliency::to_string(report.config.method));
  j["images"] = report.images.size();
  j["workers"] = report.config.workers;
  j["mean_seconds_per_image"] = report.images.empty() ? 0.0 : total / static_cast<double>(report.images.size());
  return j.dump(2) + "\n";
}

void write_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_error(const std::filesystem::path& dir, std::string_view message) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream out(dir / "error.txt", std::ios::trunc);
  out << message << "\n";
}

void write_report(const EvaluationReport& report, const std::filesystem::path& dir) {
  // Render everything first so a failure leaves no files behind.
  const std::string records = records_csv(report);
  const std::string summary = summary_json(report);
  const std::string timing = timing_json(report);
  const std::string curves = report.config.metrics.insertion_deletion ? curves_csv(report) : std::string();
  std::filesystem::create_directories(dir);
  write_atomic(dir / "records.csv", records);
  if (!curves.empty()) write_atomic(dir / "curves.csv", curves);
  write_atomic(dir / "timing.json", timing);
  write_atomic(dir / "summary.json", summary);
}

// ---------------------------------------------------------------------------

std::vector<SanityRow> sanity_check(const RunConfig& config, const nn::Network& net, const SyntheticDataset& data,
                                    std::span<const std::size_t> stages, std::size_t image_count) {
  config.validate(net);
  const auto images = select_images(data, config.split, image_count);
  auto maps_for = [&](const nn::Network& model) {
    std::vector<Tensor> maps(images.size());
    parallel_for(images.size(), config.workers, [&](std::size_t i) {
      maps[i] = saliency::explain(config.method, model, images[i]->image, images[i]->label, config.layer, config.opti)
                    .adapted;
    });
    return maps;
  };
  const auto reference = maps_for(net);
  std::vector<SanityRow> rows;
  for (std::size_t stage : stages) {
    const nn::Network model = nn::randomize_from_layer(net, stage, config.seed);
    const auto maps = maps_for(model);
    SanityRow row;
    row.stage = stage;
    row.images = maps.size();
    for (std::size_t i = 0; i < maps.size(); ++i) {
      row.spearman += metrics::spearman_correlation(reference[i], maps[i]);
      row.spearman_abs += metrics::spearman_correlation_abs(reference[i], maps[i]);
      row.ssim += metrics::ssim(reference[i], maps[i]);
    }
    const double n = static_cast<double>(maps.size());
    row.spearman /= n;
    row.spearman_abs /= n;
    row.ssim /= n;
    rows.push_back(row);
  }
  return rows;
}

std::string sanity_csv(std::span<const SanityRow> rows) {
  std::ostringstream out;
  out << "stage,images,spearman,spearman_abs,ssim\n";
  for (const auto& r : rows) {
    out << r.stage << ',' << r.images << ',' << num(r.spearman) << ',' << num(r.spearman_abs) << ',' << num(r.ssim)
        << "\n";
  }
  return out.str();
}

std::vector<AblationRow> ablation_grid(const RunConfig& config, const nn::Network& net, const SyntheticDataset& data,
                                       std::span<const saliency::Objective> objectives,
                                       std::span<const saliency::Normalization> normalizations) {
  std::vector<AblationRow> rows;
  for (auto objective : objectives) {
    for (auto normalization : normalizations) {
      RunConfig cell = config;
      cell.method = saliency::Method::OptiCam;
      cell.opti.objective = objective;
      cell.opti.normalization = normalization;
      cell.metrics = MetricSelection{};
      const Aggregate agg = aggregate(run_evaluation(cell, net, data));
      rows.push_back(AblationRow{objective, normalization, agg.get("AD"), agg.get("AG"), agg.get("AI")});
    }
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "objective,normalization,AD,AG,AI\n";
  for (const auto& r : rows) {
    out << saliency::to_string(r.objective) << ',' << saliency::to_string(r.normalization) << ',' << num(r.ad) << ','
        << num(r.ag) << ',' << num(r.ai) << "\n";
  }
  return out.str();
}

}  // namespace opticam::harness
