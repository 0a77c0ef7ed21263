#pragma once

// Naive O(n K) reference for the sample-quality metrics, written from the
// definitions without sharing code with the production path.

#include <cmath>
#include <limits>
#include <vector>

#include "lbt/ad/tensor.hpp"

namespace lbt::reference {

struct Result {
  double hq_fraction = 0.0;
  std::size_t covered = 0;
  std::vector<std::size_t> counts;
  double average_kl = 0.0;
  std::vector<double> per_mode_kl;
};

inline Result naive_metrics(const ad::Tensor& x, const ad::Tensor& mu, const ad::Tensor& sd,
                            double floor = 1e-6) {
  const std::size_t n = x.rows();
  const std::size_t k = mu.rows();
  const std::size_t d = mu.cols();
  Result r;
  r.counts.assign(k, 0);
  std::size_t hq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long pick = -1;
    double pick_dist = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double z = (x.at(i, j) - mu.at(m, j)) / sd.at(m, j);
        s += z * z;
      }
      const double dist = std::sqrt(s);
      if (dist <= 3.0 && (pick < 0 || dist < pick_dist)) {
        pick = static_cast<long>(m);
        pick_dist = dist;
      }
    }
    if (pick >= 0) {
      ++hq;
      ++r.counts[static_cast<std::size_t>(pick)];
    }
  }
  r.hq_fraction = static_cast<double>(hq) / static_cast<double>(n);
  for (std::size_t m = 0; m < k; ++m) {
    if (static_cast<double>(r.counts[m]) > 0.2 * static_cast<double>(n) / static_cast<double>(k)) {
      ++r.covered;
    }
  }

  // Nearest mean by Euclidean distance, then an MLE diagonal Gaussian per mode.
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_s = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < k; ++m) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x.at(i, j) - mu.at(m, j);
        s += diff * diff;
      }
      if (s < best_s) {
        best_s = s;
        best = m;
      }
    }
    members[best].push_back(i);
  }
  r.per_mode_kl.assign(k, std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t m = 0; m < k; ++m) {
    const std::size_t c = members[m].size();
    if (c < 2) continue;
    double kl = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i : members[m]) mean += x.at(i, j);
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t i : members[m]) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
      var /= static_cast<double>(c);
      const double s_fit = std::sqrt(std::max(var, floor));
      const double s_true = sd.at(m, j);
      // KL(N(mu_t, s_t^2) || N(mean, s_fit^2)) for one coordinate.
      kl += std::log(s_fit / s_true) +
            (s_true * s_true + (mu.at(m, j) - mean) * (mu.at(m, j) - mean)) /
                (2.0 * s_fit * s_fit) -
            0.5;
    }
    r.per_mode_kl[m] = kl;
    total += kl;
    ++used;
  }
  r.average_kl = used ? total / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace lbt::reference
