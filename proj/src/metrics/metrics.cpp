#include "lbt/metrics/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "lbt/error.hpp"

namespace lbt::metrics {
namespace {

constexpr double kRadius = 3.0;

void check_dims(const Tensor& samples, const ModeSpec& modes, const char* who) {
  if (samples.shape().size() != 2 || samples.cols() != modes.dim()) {
    throw ShapeError(std::string(who) + ": samples " + ad::shape_string(samples.shape()) +
                     " do not match " + std::to_string(modes.dim()) + "-dimensional modes");
  }
  if (modes.modes() == 0) throw ContractError(std::string(who) + ": no modes");
}

// Squared Mahalanobis distance of every sample to every mode, [n, K].
Eigen::MatrixXd mahalanobis_sq(const Tensor& samples, const ModeSpec& modes) {
  const auto n = static_cast<Eigen::Index>(samples.rows());
  const auto k = static_cast<Eigen::Index>(modes.modes());
  const std::size_t d = modes.dim();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index m = 0; m < k; ++m) {
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = modes.means.at(m, j);
      const double sd = modes.stds.at(m, j);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double z = (samples.at(i, j) - mu) / sd;
        out(i, m) += z * z;
      }
    }
  }
  return out;
}

bool within_axes(const Tensor& samples, std::size_t i, const ModeSpec& modes, std::size_t m) {
  for (std::size_t j = 0; j < modes.dim(); ++j) {
    if (std::abs(samples.at(i, j) - modes.means.at(m, j)) > kRadius * modes.stds.at(m, j)) {
      return false;
    }
  }
  return true;
}

}  // namespace

ModeSpec ModeSpec::from(const dist::GaussianMixture& mog) {
  return {mog.means, mog.stds};
}

HqMask high_quality_mask(const Tensor& samples, const ModeSpec& modes, HqRule rule) {
  check_dims(samples, modes, "high_quality_mask");
  const std::size_t n = samples.rows();
  const std::size_t k = modes.modes();
  const Eigen::MatrixXd dist2 = mahalanobis_sq(samples, modes);
  HqMask mask{std::vector<bool>(n, false), std::vector<long>(n, -1)};
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < k; ++m) {
      const double dm = std::sqrt(dist2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)));
      const bool ok = rule == HqRule::kMahalanobis ? dm <= kRadius
                                                   : within_axes(samples, i, modes, m);
      if (ok && dm < best) {
        best = dm;
        mask.mode[i] = static_cast<long>(m);
        mask.high_quality[i] = true;
      }
    }
  }
  return mask;
}

Coverage modes_covered(const Tensor& samples, const ModeSpec& modes, HqRule rule) {
  const HqMask mask = high_quality_mask(samples, modes, rule);
  Coverage c;
  c.counts.assign(modes.modes(), 0);
  for (long m : mask.mode) {
    if (m >= 0) ++c.counts[static_cast<std::size_t>(m)];
  }
  const double threshold =
      0.2 * static_cast<double>(samples.rows()) / static_cast<double>(modes.modes());
  for (std::size_t count : c.counts) {
    if (static_cast<double>(count) > threshold) ++c.covered;
  }
  return c;
}

IntraModeKl intra_mode_kl(const Tensor& samples, const ModeSpec& modes,
                          double variance_floor) {
  check_dims(samples, modes, "intra_mode_kl");
  const std::size_t n = samples.rows();
  const std::size_t k = modes.modes();
  const std::size_t d = modes.dim();

  std::vector<std::size_t> owner(n);
  IntraModeKl out;
  out.assigned.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < k; ++m) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = samples.at(i, j) - modes.means.at(m, j);
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        owner[i] = m;
      }
    }
    ++out.assigned[owner[i]];
  }

  // Two passes per mode: means, then variances about those means.
  std::vector<double> mean(k * d, 0.0);
  std::vector<double> var(k * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[owner[i] * d + j] += samples.at(i, j);
  }
  for (std::size_t m = 0; m < k; ++m) {
    if (out.assigned[m] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) mean[m * d + j] /= static_cast<double>(out.assigned[m]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = samples.at(i, j) - mean[owner[i] * d + j];
      var[owner[i] * d + j] += diff * diff;
    }
  }

  out.per_mode.assign(k, std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t m = 0; m < k; ++m) {
    if (out.assigned[m] < 2) {
      out.excluded.push_back(m);
      continue;
    }
    dist::DiagGaussian truth = dist::component({std::vector<double>(k, 1.0 / k), modes.means,
                                                modes.stds},
                                               m);
    dist::DiagGaussian fitted{std::vector<double>(d), std::vector<double>(d)};
    for (std::size_t j = 0; j < d; ++j) {
      fitted.mean[j] = mean[m * d + j];
      const double v = var[m * d + j] / static_cast<double>(out.assigned[m]);
      fitted.std[j] = std::sqrt(std::max(v, variance_floor));
    }
    out.per_mode[m] = dist::gaussian_kl_closed_form(truth, fitted);
    total += out.per_mode[m];
    ++used;
  }
  out.average = used > 0 ? total / static_cast<double>(used)
                         : std::numeric_limits<double>::quiet_NaN();
  return out;
}

MetricReport evaluate(const Tensor& samples, const ModeSpec& modes, HqRule rule,
                      double variance_floor) {
  MetricReport r;
  r.n = samples.rows();
  const HqMask mask = high_quality_mask(samples, modes, rule);
  std::size_t hq = 0;
  for (bool b : mask.high_quality) hq += b;
  r.high_quality_fraction = r.n ? static_cast<double>(hq) / static_cast<double>(r.n) : 0.0;
  const Coverage c = modes_covered(samples, modes, rule);
  r.modes_covered = c.covered;
  r.mode_counts = c.counts;
  const IntraModeKl kl = intra_mode_kl(samples, modes, variance_floor);
  r.intra_mode_kl = kl.average;
  r.per_mode_kl = kl.per_mode;
  r.excluded_modes = kl.excluded;
  return r;
}

std::vector<double> scott_bandwidth(const Tensor& samples) {
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();
  if (n < 2) throw ContractError("scott_bandwidth: needs at least two samples");
  const double factor = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
  std::vector<double> h(d);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += samples.at(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (samples.at(i, j) - m) * (samples.at(i, j) - m);
    h[j] = factor * std::sqrt(v / static_cast<double>(n - 1));
  }
  return h;
}

std::vector<double> kde_grid(const Tensor& samples, const dist::QuadratureGrid& grid,
                             std::optional<std::vector<double>> bandwidth) {
  const std::size_t d = samples.cols();
  if (samples.shape().size() != 2 || d != grid.dim()) {
    throw ShapeError("kde_grid: samples " + ad::shape_string(samples.shape()) +
                     " do not match a " + std::to_string(grid.dim()) + "-dimensional grid");
  }
  const std::vector<double> h = bandwidth ? *bandwidth : scott_bandwidth(samples);
  if (h.size() != d) throw ShapeError("kde_grid: bandwidth has the wrong dimension");
  for (double v : h) {
    if (!(v > 0.0)) throw DomainError("kde_grid: bandwidth must be positive");
  }
  const Tensor& nodes = grid.nodes();
  const std::size_t n = samples.rows();
  const std::size_t g = nodes.rows();

  // Whitened coordinates, so the kernel is exp(-|u - v|^2 / 2). Samples are
  // sorted on the first axis and only those within the cutoff are visited;
  // the skipped terms are below exp(-40) each.
  constexpr double kCutoff = 9.0;
  std::vector<std::vector<double>> u(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) u[i][j] = samples.at(i, j) / h[j];
  }
  std::sort(u.begin(), u.end(),
            [](const std::vector<double>& a, const std::vector<double>& b) { return a[0] < b[0]; });
  std::vector<double> lead(n);
  for (std::size_t i = 0; i < n; ++i) lead[i] = u[i][0];

  double norm = static_cast<double>(n);
  for (double hj : h) norm *= std::sqrt(2.0 * std::numbers::pi) * hj;

  std::vector<double> out(g, 0.0);
  std::vector<double> v(d);
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t j = 0; j < d; ++j) v[j] = nodes.at(r, j) / h[j];
    const auto lo = std::lower_bound(lead.begin(), lead.end(), v[0] - kCutoff) - lead.begin();
    const auto hi = std::upper_bound(lead.begin(), lead.end(), v[0] + kCutoff) - lead.begin();
    double acc = 0.0;
    for (auto i = lo; i < hi; ++i) {
      const std::vector<double>& ui = u[static_cast<std::size_t>(i)];
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) q += (ui[j] - v[j]) * (ui[j] - v[j]);
      if (q < kCutoff * kCutoff) acc += std::exp(-0.5 * q);
    }
    out[r] = acc / norm;
  }
  return out;
}

}  // namespace lbt::metrics
