#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "opticam/autodiff.hpp"
#include "opticam/dataset.hpp"
#include "opticam/network.hpp"
#include "opticam/rng.hpp"
#include "opticam/tensor.hpp"

namespace testing_support {

using opticam::Rng;
using opticam::Shape;
using opticam::Tensor;
namespace ad = opticam::ad;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Values in [-1, 1] whose pairwise gaps are at least 1.6/n, so no max, min or
/// sign switch happens under a small finite-difference step.
inline Tensor spaced_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  const std::size_t n = t.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)))]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double slot = -1.0 + 2.0 * (static_cast<double>(perm[i]) + 0.5) / static_cast<double>(n);
    t[i] = slot + rng.uniform(-0.1, 0.1) / static_cast<double>(n);
  }
  return t;
}

/// Moves entries out of (-margin, margin) so kinks at 0 are never crossed.
inline Tensor away_from_zero(Tensor t, double margin = 0.05) {
  for (auto& v : t.data()) {
    if (std::fabs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Compares reverse-mode gradients of `fn` (mapping leaf variables to any
/// tensor) against central differences. A non-scalar output is reduced with
/// fixed random weights so every output element contributes.
inline GradCheck gradient_check(const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& fn,
                                const std::vector<Tensor>& inputs, double step, std::uint64_t seed = 7) {
  Tensor reducer;
  auto scalar_of = [&](ad::Tape& tape, const std::vector<ad::Var>& vars) {
    ad::Var out = fn(tape, vars);
    if (out.value().size() == 1 && out.value().rank() == 0) return out;
    if (reducer.empty()) {
      Rng rng(seed);
      reducer = random_tensor(rng, out.shape(), 0.5, 1.5);
    }
    return ad::sum(ad::mul(out, tape.constant(reducer)));
  };

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    const ad::Var root = scalar_of(tape, vars);
    tape.backward(root);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  auto evaluate = [&](const std::vector<Tensor>& values) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : values) vars.push_back(tape.constant(t));
    return scalar_of(tape, vars).value().item();
  };

  GradCheck result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double original = probe[a][i];
      probe[a][i] = original + step;
      const double up = evaluate(probe);
      probe[a][i] = original - step;
      const double down = evaluate(probe);
      probe[a][i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = analytic[a][i];
      const double denom = std::max({std::fabs(exact), std::fabs(numeric), 1e-8});
      result.max_rel_error = std::max(result.max_rel_error, std::fabs(exact - numeric) / denom);
      ++result.entries;
    }
  }
  return result;
}

/// Small trained fixture shared by the unit tests.
struct SmallFixture {
  opticam::harness::SyntheticDataset data;
  opticam::nn::Network net;
  double accuracy = 0.0;
};

inline SmallFixture make_small_fixture(std::size_t classes = 3, std::size_t n_per_class = 40, std::size_t epochs = 6) {
  auto data = opticam::harness::generate_synthetic_dataset(42, n_per_class, 32, classes);
  auto net = opticam::nn::build_toy_cnn(classes, {3, 32, 32}, 42);
  opticam::nn::TrainConfig config;
  config.epochs = epochs;
  auto result = opticam::nn::train(net, data.labeled(opticam::harness::Split::Train),
                                   data.labeled(opticam::harness::Split::Val), config);
  return SmallFixture{std::move(data), std::move(result.network), result.heldout_accuracy};
}

}  // namespace testing_support
