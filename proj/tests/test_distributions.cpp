#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "doctest.h"
#include "lbt/ad/gradcheck.hpp"
#include "lbt/dist/datasets.hpp"
#include "lbt/dist/divergence.hpp"
#include "lbt/dist/mixture.hpp"
#include "lbt/error.hpp"

using namespace lbt;
using namespace lbt::dist;
using ad::Rng;
using ad::Shape;

namespace {

GaussianMixture single(std::vector<double> mean, std::vector<double> std) {
  GaussianMixture g;
  g.weights = {1.0};
  const std::size_t d = mean.size();
  g.means = Tensor::matrix(1, d, mean);
  g.stds = Tensor::matrix(1, d, std);
  return g;
}

double batch_mean(const Tensor& x) {
  double m = 0.0;
  for (double v : x.data()) m += v;
  return m / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("mog_log_density values") {
  auto std_normal = single({0.0}, {1.0});
  auto v = mog_log_density(std_normal, Tensor::matrix(1, 1, {0.0}));
  CHECK(v[0] == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
  CHECK(v[0] == doctest::Approx(-0.918939).epsilon(1e-6));

  GaussianMixture twin;
  twin.weights = {0.5, 0.5};
  twin.means = Tensor::matrix(2, 1, {0.7, 0.7});
  twin.stds = Tensor::matrix(2, 1, {1.3, 1.3});
  auto one = single({0.7}, {1.3});
  Tensor pts = Tensor::matrix(3, 1, {-1.0, 0.2, 4.0});
  auto a = mog_log_density(twin, pts);
  auto b = mog_log_density(one, pts);
  for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));

  auto data = make_dataset(DatasetKind::kBimodal1d);
  auto at0 = mog_log_density(data, Tensor::matrix(1, 1, {0.0}));
  // ln(e^{-4.5} / sqrt(2 pi))
  CHECK(at0[0] == doctest::Approx(-4.5 - 0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-14));
  CHECK(at0[0] == doctest::Approx(-5.418939).epsilon(1e-6));

  CHECK_THROWS_AS(mog_log_density(data, Tensor::matrix(1, 2, {0.0, 1.0})), ShapeError);
}

TEST_CASE("graph density matches the direct evaluation") {
  auto ring = make_dataset(DatasetKind::kRing8);
  Rng rng(9);
  Tensor x = mog_sample(ring, 64, rng);
  auto direct = mog_log_density(ring, x);
  Var lw = ad::constant(Tensor::vector(ring.weights));
  Var g = mog_log_density(lw, ad::constant(ring.means), ad::constant(ring.stds),
                          ad::constant(x));
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(g.value()[i] == doctest::Approx(direct[i]).epsilon(1e-12));
  }
}

TEST_CASE("mog_log_density gradients pass finite differences") {
  Rng rng(11);
  GaussianMixture mog;
  mog.weights = {0.3, 0.7};
  mog.means = Tensor::matrix({{0.2, -0.4}, {-0.9, 0.5}});
  mog.stds = Tensor::matrix({{0.8, 1.1}, {0.6, 0.9}});
  Tensor x = mog_sample(mog, 5, rng);

  auto through = [&](int which) {
    return [&, which](const Var& p) {
      Var w = ad::constant(Tensor::vector(mog.weights));
      Var mu = ad::constant(mog.means);
      Var sd = ad::constant(mog.stds);
      Var pts = ad::constant(x);
      switch (which) {
        case 0: pts = p; break;
        case 1: w = p; break;
        case 2: mu = p; break;
        default: sd = p; break;
      }
      return ad::sum(mog_log_density(w, mu, sd, pts));
    };
  };
  CHECK(ad::finite_difference_check(through(0), x).max_rel_error < 1e-6);
  CHECK(ad::finite_difference_check(through(1), Tensor::vector(mog.weights)).max_rel_error < 1e-6);
  CHECK(ad::finite_difference_check(through(2), mog.means).max_rel_error < 1e-6);
  CHECK(ad::finite_difference_check(through(3), mog.stds).max_rel_error < 1e-6);
}

TEST_CASE("mog_sample") {
  auto data = make_dataset(DatasetKind::kBimodal1d);
  Rng rng(123);
  Tensor x = mog_sample(data, 50000, rng);
  CHECK(std::abs(batch_mean(x)) < 0.05);

  GaussianMixture degenerate;
  degenerate.weights = {1.0, 0.0};
  degenerate.means = Tensor::matrix(2, 1, {-10.0, 10.0});
  degenerate.stds = Tensor::matrix(2, 1, {0.5, 0.5});
  Rng r2(4);
  Tensor d = mog_sample(degenerate, 2000, r2);
  for (double v : d.data()) CHECK(v < -5.0);

  Rng a(77);
  Rng b(77);
  CHECK(mog_sample(data, 100, a) == mog_sample(data, 100, b));
}

TEST_CASE("mixture validation") {
  GaussianMixture bad;
  bad.weights = {0.5, 0.6};
  bad.means = Tensor::matrix(2, 1, {0, 1});
  bad.stds = Tensor::matrix(2, 1, {1, 1});
  CHECK_THROWS_AS(validate(bad), DomainError);
  bad.weights = {0.5, 0.5};
  bad.stds = Tensor::matrix(2, 1, {1, 0});
  CHECK_THROWS_AS(validate(bad), DomainError);
}

TEST_CASE("gaussian_kl_closed_form") {
  CHECK(gaussian_kl_closed_form({{0}, {1}}, {{0}, {1}}) == 0.0);
  CHECK(gaussian_kl_closed_form({{1}, {1}}, {{0}, {1}}) == doctest::Approx(0.5));
  CHECK(gaussian_kl_closed_form({{0}, {2}}, {{0}, {1}}) ==
        doctest::Approx(std::log(0.5) + 1.5).epsilon(1e-14));
  CHECK(gaussian_kl_closed_form({{0}, {2}}, {{0}, {1}}) == doctest::Approx(0.806853).epsilon(1e-6));
  CHECK_THROWS_AS(gaussian_kl_closed_form({{0}, {0}}, {{0}, {1}}), DomainError);
  CHECK_THROWS_AS(gaussian_kl_closed_form({{0}, {1}}, {{0}, {-1}}), DomainError);
}

TEST_CASE("numeric_divergence basics") {
  auto data = make_dataset(DatasetKind::kBimodal1d);
  auto grid = QuadratureGrid::line(-11, 11, 4400);
  auto kl = numeric_divergence(data, data, grid, DivergenceKind::kKL);
  auto js = numeric_divergence(data, data, grid, DivergenceKind::kJS);
  CHECK(std::abs(kl.value) < 1e-8);
  CHECK(std::abs(js.value) < 1e-8);
  CHECK_FALSE(kl.coverage_warning);

  auto p = single({1.0}, {1.0});
  auto q = single({0.0}, {1.0});
  auto g = QuadratureGrid::covering(p, 8.0, 0.005);
  auto g2 = QuadratureGrid::covering(q, 8.0, 0.005);
  QuadratureGrid both({{std::min(g.axes()[0].lo, g2.axes()[0].lo),
                        std::max(g.axes()[0].hi, g2.axes()[0].hi), 3600}});
  CHECK(numeric_divergence(p, q, both, DivergenceKind::kKL).value ==
        doctest::Approx(0.5).epsilon(1e-6));

  // Far-apart distributions saturate JS at ln 2.
  auto far_p = single({-30.0}, {1.0});
  auto far_q = single({30.0}, {1.0});
  auto wide = QuadratureGrid::line(-40, 40, 16000);
  auto sat = numeric_divergence(far_p, far_q, wide, DivergenceKind::kJS);
  CHECK(sat.value <= std::numbers::ln2 + 1e-8);
  CHECK(sat.value == doctest::Approx(std::numbers::ln2).epsilon(1e-8));

  // A grid that clips the tails raises the coverage flag.
  auto narrow = QuadratureGrid::line(-4, 4, 800);
  CHECK(numeric_divergence(data, data, narrow, DivergenceKind::kKL).coverage_warning);
}

TEST_CASE("numeric KL agrees with closed form on 50 random pairs") {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = trial % 2 ? 2 : 1;
    std::vector<double> mp(d), sp(d), mq(d), sq(d);
    for (std::size_t j = 0; j < d; ++j) {
      mp[j] = -1.5 + 3.0 * rng.uniform();
      mq[j] = -1.5 + 3.0 * rng.uniform();
      sp[j] = 0.5 + rng.uniform();
      sq[j] = 0.5 + rng.uniform();
    }
    auto p = single(mp, sp);
    auto q = single(mq, sq);
    // Box covering both by 9 stds, cells at most 0.06 of the smallest std.
    std::vector<QuadratureGrid::Axis> axes;
    for (std::size_t j = 0; j < d; ++j) {
      const double lo = std::min(mp[j] - 9 * sp[j], mq[j] - 9 * sq[j]);
      const double hi = std::max(mp[j] + 9 * sp[j], mq[j] + 9 * sq[j]);
      const double h = 0.06 * std::min(sp[j], sq[j]);
      axes.push_back({lo, hi, static_cast<std::size_t>(std::ceil((hi - lo) / h))});
    }
    QuadratureGrid grid(axes);
    auto numeric = numeric_divergence(p, q, grid, DivergenceKind::kKL);
    const double exact = gaussian_kl_closed_form({mp, sp}, {mq, sq});
    worst = std::max(worst, std::abs(numeric.value - exact));
    CHECK_FALSE(numeric.coverage_warning);

    auto js = numeric_divergence(p, q, grid, DivergenceKind::kJS);
    CHECK(numeric.value >= -1e-8);
    CHECK(js.value >= -1e-8);
    CHECK(js.value <= std::numbers::ln2 + 1e-8);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("divergence landscape") {
  auto data = make_dataset(DatasetKind::kBimodal1d);
  const auto axis = lattice_axis(-5, 5, 0.1);
  REQUIRE(axis.size() == 101);
  auto grid = landscape_grid(data, axis);
  CHECK(grid.axes()[0].lo <= -13.0);
  CHECK(grid.axes()[0].hi >= 13.0);

  auto kl = divergence_landscape(data, axis, DivergenceKind::kKL, grid);
  auto js = divergence_landscape(data, axis, DivergenceKind::kJS, grid);
  CHECK_FALSE(kl.coverage_warning);

  const std::size_t i_m3 = 20;  // -3.0
  const std::size_t i_p3 = 80;  // +3.0
  CHECK(axis[i_m3] == doctest::Approx(-3.0));
  CHECK(axis[i_p3] == doctest::Approx(3.0));
  CHECK(std::abs(kl.at(i_m3, i_p3)) < 1e-8);
  CHECK(std::abs(js.at(i_m3, i_p3)) < 1e-8);

  for (std::size_t i = 0; i < axis.size(); i += 7) {
    for (std::size_t j = 0; j < axis.size(); j += 5) {
      CHECK(kl.at(i, j) == kl.at(j, i));
      CHECK(js.at(i, j) == js.at(j, i));
      CHECK(js.at(i, j) <= std::numbers::ln2 + 1e-8);
      CHECK(kl.at(i, j) >= -1e-8);
    }
  }

  // Strict lattice minima, compared with a brute-force scipy evaluation of
  // the same lattice. JS keeps a pair of collapsed minima (both means
  // negative) next to (-3,-3), which itself is a saddle of the family.
  // KL keeps only the two global optima.
  auto strict_minima = [&](const Landscape& l) {
    std::vector<std::pair<double, double>> found;
    for (std::size_t i = 1; i + 1 < axis.size(); ++i) {
      for (std::size_t j = 1; j + 1 < axis.size(); ++j) {
        if (is_strict_local_min(l, i, j)) found.emplace_back(axis[i], axis[j]);
      }
    }
    return found;
  };
  auto js_min = strict_minima(js);
  auto kl_min = strict_minima(kl);
  REQUIRE(js_min.size() == 6);
  REQUIRE(kl_min.size() == 2);
  const std::vector<std::pair<double, double>> js_expected = {
      {-3.2, -2.7}, {-3.0, 3.0}, {-2.7, -3.2}, {2.7, 3.2}, {3.0, -3.0}, {3.2, 2.7}};
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(js_min[k].first == doctest::Approx(js_expected[k].first));
    CHECK(js_min[k].second == doctest::Approx(js_expected[k].second));
  }
  CHECK(kl_min[0].first == doctest::Approx(-3.0));
  CHECK(kl_min[0].second == doctest::Approx(3.0));
  CHECK(js.at(18, 23) == doctest::Approx(0.2141801594268655).epsilon(1e-7));
  CHECK_FALSE(is_strict_local_min(js, i_m3, i_m3));
  CHECK_FALSE(is_strict_local_min(kl, i_m3, i_m3));
}

TEST_CASE("landscape is stable under quadrature refinement") {
  auto data = make_dataset(DatasetKind::kBimodal1d);
  const auto axis = lattice_axis(-5, 5, 0.5);
  auto grid = landscape_grid(data, axis);
  for (auto kind : {DivergenceKind::kKL, DivergenceKind::kJS}) {
    auto coarse = divergence_landscape(data, axis, kind, grid);
    auto fine = divergence_landscape(data, axis, kind, grid.refined());
    double worst = 0.0;
    for (std::size_t i = 0; i < coarse.values.size(); ++i) {
      worst = std::max(worst, std::abs(coarse.values[i] - fine.values[i]));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("make_dataset") {
  auto ring = make_dataset(DatasetKind::kRing8);
  CHECK(ring.components() == 8);
  CHECK(ring.means.at(0, 0) == doctest::Approx(1.0));
  CHECK(ring.means.at(0, 1) == doctest::Approx(0.0));
  CHECK(ring.stds.at(3, 1) == 0.1);

  auto grid = make_dataset(DatasetKind::kGrid100);
  CHECK(grid.components() == 100);
  double lo = 1e9, hi = -1e9;
  for (double v : grid.means.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == doctest::Approx(-0.9));
  CHECK(hi == doctest::Approx(0.9));
  CHECK(grid.stds.at(0, 0) == 0.01);

  auto bi = make_dataset(DatasetKind::kBimodal1d);
  CHECK(bi.means.at(0, 0) == -3.0);
  CHECK(bi.means.at(1, 0) == 3.0);
  CHECK(bi.weights[0] == 0.5);

  CHECK(make_dataset(DatasetKind::kGrid25).components() == 25);
  CHECK(dataset_kind_from_string("ring8") == DatasetKind::kRing8);
  CHECK_THROWS_AS(dataset_kind_from_string("spiral"), ContractError);
}

TEST_CASE("quadrature grid") {
  auto g = QuadratureGrid::square(-1, 1, 10);
  double total = 0.0;
  for (double w : g.weights()) {
    CHECK(w > 0.0);
    total += w;
  }
  CHECK(total == doctest::Approx(4.0));
  CHECK(g.nodes().at(0, 0) == doctest::Approx(-0.9));
  CHECK(g.nodes().at(1, 1) == doctest::Approx(-0.7));
}

TEST_CASE("landscape descent") {
  auto data = make_dataset(DatasetKind::kBimodal1d);
  auto grid = landscape_grid(data, lattice_axis(-5, 5, 0.1));
  LandscapeEvaluator eval(data, grid);

  auto kl = descend_landscape(eval, -3.5, -2.5, DivergenceKind::kKL);
  CHECK(std::hypot(kl.t1 + 3.0, kl.t2 - 3.0) < 0.05);
  CHECK(kl.value < 1e-8);

  // The continuous JS minimum nearest the start, from scipy Nelder-Mead on
  // the same family: (-3.25080753, -2.69167474).
  auto js = descend_landscape(eval, -3.5, -2.5, DivergenceKind::kJS);
  CHECK(js.t1 == doctest::Approx(-3.25080753).epsilon(1e-4));
  CHECK(js.t2 == doctest::Approx(-2.69167474).epsilon(1e-4));
  CHECK(js.value == doctest::Approx(0.21413330245).epsilon(1e-7));

  auto stay = descend_landscape(eval, -3.0, 3.0, DivergenceKind::kKL);
  CHECK(stay.initial_gradient_norm < 1e-6);
  CHECK(std::hypot(stay.t1 + 3.0, stay.t2 - 3.0) < 1e-9);
}
