#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "lbt/ad/tensor.hpp"
#include "lbt/dist/divergence.hpp"
#include "lbt/dist/mixture.hpp"

namespace lbt::metrics {

using ad::Tensor;

struct ModeSpec {
  Tensor means;  // [K, D]
  Tensor stds;   // [K, D]

  static ModeSpec from(const dist::GaussianMixture& mog);
  std::size_t modes() const { return means.rows(); }
  std::size_t dim() const { return means.cols(); }
};

/// Radial: Mahalanobis distance under diag(sigma_k^2) at most 3.
/// Per-axis: every coordinate within 3 sigma_k,d of the mode.
enum class HqRule { kMahalanobis, kPerAxis };

struct HqMask {
  std::vector<bool> high_quality;
  /// Qualifying mode with the smallest Mahalanobis distance (lowest index on
  /// ties), or -1.
  std::vector<long> mode;
};

HqMask high_quality_mask(const Tensor& samples, const ModeSpec& modes,
                         HqRule rule = HqRule::kMahalanobis);

struct Coverage {
  std::size_t covered = 0;
  std::vector<std::size_t> counts;  // HQ samples assigned to each mode
};

/// A mode is covered when its HQ-assigned count strictly exceeds 0.2 n / K.
Coverage modes_covered(const Tensor& samples, const ModeSpec& modes,
                       HqRule rule = HqRule::kMahalanobis);

struct IntraModeKl {
  double average = 0.0;  // over modes with >= 2 samples; NaN if none
  std::vector<double> per_mode;  // NaN for excluded modes
  std::vector<std::size_t> assigned;
  std::vector<std::size_t> excluded;
};

/// Every sample goes to its Euclidean-nearest mode mean. Each mode gets a
/// diagonal Gaussian fitted by maximum likelihood (variance floored) and is
/// scored by KL(true mode || fitted).
IntraModeKl intra_mode_kl(const Tensor& samples, const ModeSpec& modes,
                          double variance_floor = 1e-6);

struct MetricReport {
  std::size_t n = 0;
  double high_quality_fraction = 0.0;
  std::size_t modes_covered = 0;
  std::vector<std::size_t> mode_counts;
  double intra_mode_kl = 0.0;
  std::vector<double> per_mode_kl;
  std::vector<std::size_t> excluded_modes;
};

MetricReport evaluate(const Tensor& samples, const ModeSpec& modes,
                      HqRule rule = HqRule::kMahalanobis,
                      double variance_floor = 1e-6);

/// Scott's rule per dimension: n^(-1/(D+4)) * sample std.
std::vector<double> scott_bandwidth(const Tensor& samples);

/// Gaussian-kernel density estimate at every grid node, one value per node.
/// Bandwidth defaults to Scott's rule.
std::vector<double> kde_grid(const Tensor& samples, const dist::QuadratureGrid& grid,
                             std::optional<std::vector<double>> bandwidth = std::nullopt);

}  // namespace lbt::metrics
