#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lbt/dist/datasets.hpp"
#include "lbt/error.hpp"
#include "lbt/metrics/metrics.hpp"
#include "reference_metrics.hpp"

using namespace lbt;
using namespace lbt::metrics;
using ad::Rng;

namespace {

ModeSpec ring_modes() { return ModeSpec::from(dist::make_dataset(dist::DatasetKind::kRing8)); }

bool same_or_both_nan(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

}  // namespace

TEST_CASE("high-quality mask") {
  ModeSpec modes = ring_modes();
  Tensor at_mean = Tensor::matrix(1, 2, {modes.means.at(3, 0), modes.means.at(3, 1)});
  auto mask = high_quality_mask(at_mean, modes);
  CHECK(mask.high_quality[0]);
  CHECK(mask.mode[0] == 3);

  ModeSpec unit{Tensor::matrix(1, 2, {0.0, 0.0}), Tensor::matrix(1, 2, {1.0, 1.0})};
  auto edge = high_quality_mask(Tensor::matrix(2, 2, {3.0, 0.0, 3.01, 0.0}), unit);
  CHECK(edge.high_quality[0]);  // boundary inclusive
  CHECK_FALSE(edge.high_quality[1]);
  CHECK(edge.mode[1] == -1);

  // Radial and per-axis rules disagree on the corner (2.5, 2.5).
  Tensor corner = Tensor::matrix(1, 2, {2.5, 2.5});
  CHECK_FALSE(high_quality_mask(corner, unit, HqRule::kMahalanobis).high_quality[0]);
  CHECK(high_quality_mask(corner, unit, HqRule::kPerAxis).high_quality[0]);

  CHECK_THROWS_AS(high_quality_mask(Tensor::matrix(1, 3, {0, 0, 0}), unit), ShapeError);
}

TEST_CASE("true-sample high-quality fraction matches the chi-square tail") {
  auto ring = dist::make_dataset(dist::DatasetKind::kRing8);
  Rng rng(99);
  Tensor x = dist::mog_sample(ring, 50000, rng);
  auto rep = evaluate(x, ModeSpec::from(ring));
  // P(chi2_2 <= 9) = 1 - exp(-4.5)
  CHECK(std::abs(rep.high_quality_fraction - (1.0 - std::exp(-4.5))) < 0.003);
  CHECK(rep.modes_covered == 8);
  CHECK(rep.intra_mode_kl < 0.01);
  CHECK(rep.excluded_modes.empty());
}

TEST_CASE("modes covered") {
  ModeSpec modes = ring_modes();
  Rng rng(1);
  auto ring = dist::make_dataset(dist::DatasetKind::kRing8);

  dist::GaussianMixture one = ring;
  one.weights = {1, 0, 0, 0, 0, 0, 0, 0};
  CHECK(modes_covered(dist::mog_sample(one, 4000, rng), modes).covered == 1);

  Tensor far(ad::Shape{100, 2}, 50.0);
  auto none = modes_covered(far, modes);
  CHECK(none.covered == 0);
  CHECK(std::accumulate(none.counts.begin(), none.counts.end(), std::size_t{0}) == 0);

  int full = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng r(seed);
    full += modes_covered(dist::mog_sample(ring, 8000, r), modes).covered == 8;
  }
  CHECK(full >= 99);
}

TEST_CASE("modes covered is permutation invariant") {
  auto ring = dist::make_dataset(dist::DatasetKind::kRing8);
  ModeSpec modes = ring_modes();
  Rng rng(7);
  dist::GaussianMixture skew = ring;
  skew.weights = {0.3, 0.3, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05};
  Tensor x = dist::mog_sample(skew, 800, rng);
  auto base = modes_covered(x, modes);

  std::vector<std::size_t> perm(800);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  Tensor xp(x.shape());
  for (std::size_t i = 0; i < 800; ++i) {
    xp.at(i, 0) = x.at(perm[i], 0);
    xp.at(i, 1) = x.at(perm[i], 1);
  }
  CHECK(modes_covered(xp, modes).covered == base.covered);

  ModeSpec flipped = modes;
  for (std::size_t m = 0; m < 8; ++m) {
    for (std::size_t j = 0; j < 2; ++j) {
      flipped.means.at(m, j) = modes.means.at(7 - m, j);
      flipped.stds.at(m, j) = modes.stds.at(7 - m, j);
    }
  }
  auto f = modes_covered(x, flipped);
  CHECK(f.covered == base.covered);
  for (std::size_t m = 0; m < 8; ++m) CHECK(f.counts[m] == base.counts[7 - m]);
}

TEST_CASE("intra-mode KL") {
  ModeSpec modes = ring_modes();

  // All samples exactly at the means: floored variance in every coordinate.
  Tensor at(ad::Shape{16, 2});
  for (std::size_t i = 0; i < 16; ++i) {
    at.at(i, 0) = modes.means.at(i % 8, 0);
    at.at(i, 1) = modes.means.at(i % 8, 1);
  }
  auto kl = intra_mode_kl(at, modes);
  const double floor = 1e-6;
  const double sigma = 0.1;
  const double expected =
      2.0 * (std::log(std::sqrt(floor) / sigma) + sigma * sigma / (2.0 * floor) - 0.5);
  CHECK(kl.average == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::isfinite(kl.average));

  // Two samples at mu +- sigma per coordinate fit the true Gaussian.
  ModeSpec unit{Tensor::matrix(1, 2, {0.5, -0.5}), Tensor::matrix(1, 2, {0.25, 0.5})};
  Tensor pair = Tensor::matrix({{0.75, 0.0}, {0.25, -1.0}});
  auto exact = intra_mode_kl(pair, unit);
  CHECK(std::abs(exact.average) < 1e-15);

  // A mode with fewer than two samples is excluded and flagged.
  Tensor lone = Tensor::matrix(3, 2, {1.0, 0.0, 1.01, 0.0, -1.0, 0.0});
  auto part = intra_mode_kl(lone, modes);
  CHECK(std::find(part.excluded.begin(), part.excluded.end(), 4u) != part.excluded.end());
  CHECK(part.excluded.size() == 7);
  CHECK(std::isnan(part.per_mode[4]));
  CHECK(std::isfinite(part.average));
}

TEST_CASE("intra-mode KL is non-negative") {
  Rng rng(55);
  ModeSpec modes = ring_modes();
  for (int trial = 0; trial < 30; ++trial) {
    Tensor x = ad::sample_uniform(rng, {50, 2}, -1.5, 1.5);
    auto kl = intra_mode_kl(x, modes);
    for (double v : kl.per_mode) {
      if (!std::isnan(v)) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("production metrics equal the naive reference") {
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * 10);
    const std::size_t d = trial % 3 == 0 ? 1 : 2;
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 1000);
    ModeSpec modes{ad::sample_uniform(rng, {k, d}, -2, 2), ad::sample_uniform(rng, {k, d}, 0.05, 0.6)};
    Tensor x = ad::sample_uniform(rng, {n, d}, -3, 3);
    auto prod = evaluate(x, modes);
    auto ref = reference::naive_metrics(x, modes.means, modes.stds);
    CHECK(prod.high_quality_fraction == ref.hq_fraction);
    CHECK(prod.modes_covered == ref.covered);
    CHECK(prod.mode_counts == ref.counts);
    CHECK(same_or_both_nan(prod.intra_mode_kl, ref.average_kl));
    for (std::size_t m = 0; m < k; ++m) CHECK(same_or_both_nan(prod.per_mode_kl[m], ref.per_mode_kl[m]));
  }
}

TEST_CASE("metrics are deterministic") {
  Rng rng(3);
  Tensor x = ad::sample_uniform(rng, {300, 2}, -1.5, 1.5);
  auto a = evaluate(x, ring_modes());
  auto b = evaluate(x, ring_modes());
  CHECK(a.high_quality_fraction == b.high_quality_fraction);
  CHECK(a.intra_mode_kl == b.intra_mode_kl);
  CHECK(a.mode_counts == b.mode_counts);
}

TEST_CASE("kde grid") {
  auto grid = dist::QuadratureGrid::square(-3, 3, 300);
  Tensor one = Tensor::matrix(1, 2, {0.2, -0.3});
  auto bump = kde_grid(one, grid, std::vector<double>{0.3, 0.3});
  double mass = 0.0;
  for (std::size_t i = 0; i < bump.size(); ++i) mass += bump[i] * grid.weights()[i];
  CHECK(std::abs(mass - 1.0) < 1e-3);

  auto ring = dist::make_dataset(dist::DatasetKind::kRing8);
  Rng rng(6);
  Tensor x = dist::mog_sample(ring, 100000, rng);
  auto h = scott_bandwidth(x);
  CHECK(h.size() == 2);
  CHECK(h[0] == doctest::Approx(std::pow(100000.0, -1.0 / 6.0) * std::sqrt(0.5 + 0.01)).epsilon(0.02));

  auto flat = kde_grid(x, dist::QuadratureGrid::square(-1.5, 1.5, 30), std::vector<double>{10.0, 10.0});
  CHECK(*std::max_element(flat.begin(), flat.end()) / *std::min_element(flat.begin(), flat.end()) < 2.0);
}

TEST_CASE("kde of a large ring sample tracks the true density") {
  auto ring = dist::make_dataset(dist::DatasetKind::kRing8);
  Rng rng(8);
  Tensor x = dist::mog_sample(ring, 100000, rng);
  auto grid = dist::QuadratureGrid::square(-1.5, 1.5, 100);
  // Scott's rule is wider than the 0.1 mode std here, so a narrow explicit
  // bandwidth is used to compare against the analytic density.
  auto est = kde_grid(x, grid, std::vector<double>{0.025, 0.025});
  auto truth = dist::mog_log_density(ring, grid.nodes());
  double peak = 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double p = std::exp(truth[i]);
    peak = std::max(peak, p);
    worst = std::max(worst, std::abs(est[i] - p));
  }
  MESSAGE("kde sup-norm error / peak = " << worst / peak);
  CHECK(worst < 0.15 * peak);
}
