#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "opticam/metrics.hpp"

namespace opticam::metrics {

namespace {

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.empty()) {
    throw std::invalid_argument(std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
                                to_string(b.shape()) + " differ");
  }
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_correlation(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "spearman_correlation");
  const auto ra = average_ranks(a.data());
  const auto rb = average_ranks(b.data());
  return pearson(ra, rb);
}

double spearman_correlation_abs(const Tensor& a, const Tensor& b) {
  Tensor abs_a = a, abs_b = b;
  for (auto& v : abs_a.data()) v = std::fabs(v);
  for (auto& v : abs_b.data()) v = std::fabs(v);
  return spearman_correlation(abs_a, abs_b);
}

double ssim(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "ssim");
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.data().begin(), a.data().end(), 0.0) / n;
  const double mb = std::accumulate(b.data().begin(), b.data().end(), 0.0) / n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cov += (a[i] - ma) * (b[i] - mb);
  }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
}

}  // namespace opticam::metrics
