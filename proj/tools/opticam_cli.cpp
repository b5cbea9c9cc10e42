#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "opticam/dataset.hpp"
#include "opticam/experiment.hpp"
#include "opticam/network.hpp"
#include "opticam/saliency.hpp"
#include "opticam/weights_io.hpp"

namespace fs = std::filesystem;
using namespace opticam;

namespace {

struct MethodOptions {
  std::string method = "opti-cam";
  std::string layer = std::string(nn::kDefaultLayer);
  std::string objective = "mask";
  std::string norm = "range";
  std::string selector = "logit";
  double lr = 0.1;
  std::size_t iters = 100;
  double tol = 1e-10;

  void add_to(CLI::App& app) {
    app.add_option("--method", method, "Saliency method");
    app.add_option("--layer", layer, "Hook layer");
    app.add_option("--objective", objective, "Opti-CAM objective: mask, diff, iomask, iodiff");
    app.add_option("--norm", norm, "Opti-CAM normalization: range, max, sigmoid");
    app.add_option("--selector", selector, "Opti-CAM selector: logit, probability");
    app.add_option("--lr", lr, "Opti-CAM learning rate");
    app.add_option("--iters", iters, "Opti-CAM iterations");
    app.add_option("--tol", tol, "Opti-CAM stopping tolerance");
  }

  void apply(harness::RunConfig& config) const {
    config.method = saliency::parse_method(method);
    config.layer = layer;
    config.opti.objective = saliency::parse_objective(objective);
    config.opti.normalization = saliency::parse_normalization(norm);
    config.opti.selector = saliency::parse_selector(selector);
    config.opti.learning_rate = lr;
    config.opti.max_iterations = iters;
    config.opti.tolerance = tol;
  }
};

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency explanation and evaluation toolkit"};
  app.require_subcommand(1);

  // gen-data
  std::uint64_t gen_seed = 42;
  std::size_t gen_n = 300, gen_size = 32, gen_classes = 3;
  fs::path gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
  gen->add_option("--seed", gen_seed);
  gen->add_option("--n", gen_n, "Images per class");
  gen->add_option("--size", gen_size, "Image side length");
  gen->add_option("--classes", gen_classes);
  gen->add_option("--out", gen_out)->required();

  // train
  fs::path train_data, train_out;
  nn::TrainConfig train_config;
  auto* tr = app.add_subcommand("train", "Train the toy CNN");
  tr->add_option("--data", train_data)->required();
  tr->add_option("--epochs", train_config.epochs);
  tr->add_option("--batch", train_config.batch_size);
  tr->add_option("--lr", train_config.learning_rate);
  tr->add_option("--momentum", train_config.momentum);
  tr->add_option("--seed", train_config.seed);
  tr->add_option("--out", train_out, "Weights file")->required();

  // explain
  fs::path ex_weights, ex_data, ex_out;
  std::size_t ex_image = 0;
  std::optional<std::size_t> ex_class;
  MethodOptions ex_method;
  auto* ex = app.add_subcommand("explain", "Compute one saliency map");
  ex->add_option("--weights", ex_weights)->required();
  ex->add_option("--data", ex_data)->required();
  ex->add_option("--image-id", ex_image)->required();
  ex->add_option("--class", ex_class, "Target class (default: true label)");
  ex_method.add_to(*ex);
  ex->add_option("--out", ex_out, "Output .salv file")->required();

  // eval
  fs::path ev_weights, ev_data, ev_out;
  MethodOptions ev_method;
  std::string ev_metrics = "ad,ag,ai", ev_split = "test";
  harness::RunConfig ev_config;
  auto* ev = app.add_subcommand("eval", "Evaluate a method over a dataset split");
  ev->add_option("--weights", ev_weights)->required();
  ev->add_option("--data", ev_data)->required();
  ev_method.add_to(*ev);
  ev->add_option("--metrics", ev_metrics, "Comma list of ad, ag, ai, id, loc, sel");
  ev->add_option("--id-steps", ev_config.id_steps, "Insertion/deletion steps (0: side length)");
  ev->add_flag("--id-true-class", ev_config.id_track_true_class, "Track the true class in insertion/deletion");
  ev->add_option("--box-eta", ev_config.box_etas, "BoxAcc thresholds")->delimiter(',');
  ev->add_option("--box-delta", ev_config.box_deltas, "BoxAcc IoU levels")->delimiter(',');
  ev->add_option("--alphas", ev_config.alphas, "Selectivity exponents")->delimiter(',');
  ev->add_option("--split", ev_split);
  ev->add_option("--limit", ev_config.limit, "Max images (0: all)");
  ev->add_option("--seed", ev_config.seed);
  ev->add_option("--workers", ev_config.workers);
  ev->add_option("--out", ev_out, "Report directory")->required();

  // sanity
  fs::path sa_weights, sa_data, sa_out;
  MethodOptions sa_method;
  std::vector<std::size_t> sa_stages{0, 1, 2, 3};
  std::size_t sa_images = 20;
  harness::RunConfig sa_config;
  auto* sa = app.add_subcommand("sanity", "Parameter randomization check");
  sa->add_option("--weights", sa_weights)->required();
  sa->add_option("--data", sa_data)->required();
  sa_method.add_to(*sa);
  sa->add_option("--stages", sa_stages, "Randomized layer counts")->delimiter(',');
  sa->add_option("--images", sa_images);
  sa->add_option("--seed", sa_config.seed);
  sa->add_option("--workers", sa_config.workers);
  sa->add_option("--out", sa_out, "Output directory")->required();

  // ablate
  fs::path ab_weights, ab_data, ab_out;
  harness::RunConfig ab_config;
  std::string ab_selector = "logit", ab_split = "test";
  auto* ab = app.add_subcommand("ablate", "Objective x normalization grid for Opti-CAM");
  ab->add_option("--weights", ab_weights)->required();
  ab->add_option("--data", ab_data)->required();
  ab->add_option("--layer", ab_config.layer, "Hook layer");
  ab->add_option("--selector", ab_selector, "Opti-CAM selector: logit, probability");
  ab->add_option("--lr", ab_config.opti.learning_rate, "Opti-CAM learning rate");
  ab->add_option("--iters", ab_config.opti.max_iterations, "Opti-CAM iterations");
  ab->add_option("--tol", ab_config.opti.tolerance, "Opti-CAM stopping tolerance");
  ab->add_option("--split", ab_split);
  ab->add_option("--limit", ab_config.limit);
  ab->add_option("--workers", ab_config.workers);
  ab->add_option("--out", ab_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  std::optional<fs::path> report_dir;
  try {
    if (*gen) {
      harness::save_dataset(harness::generate_synthetic_dataset(gen_seed, gen_n, gen_size, gen_classes), gen_out);
      std::printf("wrote %zu images to %s\n", gen_n * gen_classes, gen_out.string().c_str());
    } else if (*tr) {
      const auto data = harness::load_dataset(train_data);
      const auto net = nn::build_toy_cnn(data.class_count, nn::InputShape{3, data.image_size, data.image_size},
                                         train_config.seed);
      const auto result =
          nn::train(net, data.labeled(harness::Split::Train), data.labeled(harness::Split::Val), train_config);
      nn::save_weights(result.network, train_out);
      std::printf("held-out accuracy %.4f\n", result.heldout_accuracy);
    } else if (*ex) {
      const auto data = harness::load_dataset(ex_data);
      const auto net = nn::load_weights(ex_weights);
      const harness::Sample* sample = nullptr;
      for (const auto& s : data.samples) {
        if (s.id == ex_image) sample = &s;
      }
      if (!sample) throw std::invalid_argument("no image with id " + std::to_string(ex_image));
      harness::RunConfig config;
      ex_method.apply(config);
      config.validate(net);
      const std::size_t target = ex_class ? *ex_class : sample->label;
      if (target >= net.class_count()) throw std::invalid_argument("class " + std::to_string(target) + " out of range");
      const auto map = saliency::explain(config.method, net, sample->image, target, config.layer, config.opti);
      harness::export_saliency(map, ex_out);
      std::printf("wrote %s\n", ex_out.string().c_str());
    } else if (*ev) {
      report_dir = ev_out;
      const auto data = harness::load_dataset(ev_data);
      const auto net = nn::load_weights(ev_weights);
      ev_method.apply(ev_config);
      ev_config.metrics = harness::MetricSelection::parse(ev_metrics);
      ev_config.split = harness::parse_split(ev_split);
      const auto report = harness::run_evaluation(ev_config, net, data);
      harness::write_report(report, ev_out);
      std::fputs(harness::summary_json(report).c_str(), stdout);
    } else if (*sa) {
      report_dir = sa_out;
      const auto data = harness::load_dataset(sa_data);
      const auto net = nn::load_weights(sa_weights);
      sa_method.apply(sa_config);
      const auto rows = harness::sanity_check(sa_config, net, data, sa_stages, sa_images);
      fs::create_directories(sa_out);
      const std::string csv = harness::sanity_csv(rows);
      harness::write_atomic(sa_out / "sanity.csv", csv);
      std::fputs(csv.c_str(), stdout);
    } else if (*ab) {
      report_dir = ab_out;
      const auto data = harness::load_dataset(ab_data);
      const auto net = nn::load_weights(ab_weights);
      ab_config.opti.selector = saliency::parse_selector(ab_selector);
      ab_config.split = harness::parse_split(ab_split);
      const std::vector<saliency::Objective> objectives{saliency::Objective::Mask, saliency::Objective::Diff,
                                                        saliency::Objective::IOMask, saliency::Objective::IODiff};
      const std::vector<saliency::Normalization> norms{saliency::Normalization::Range, saliency::Normalization::Max,
                                                       saliency::Normalization::Sigmoid};
      const auto rows = harness::ablation_grid(ab_config, net, data, objectives, norms);
      fs::create_directories(ab_out);
      const std::string csv = harness::ablation_csv(rows);
      harness::write_atomic(ab_out / "ablation.csv", csv);
      std::fputs(csv.c_str(), stdout);
    }
  } catch (const std::exception& e) {
    const std::string message = "error: " + one_line(e.what());
    if (report_dir) harness::write_error(*report_dir, message);
    std::fprintf(stderr, "%s\n", message.c_str());
    return 1;
  }
  return 0;
}
