#include "lbt/lab/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "lbt/ad/gradcheck.hpp"
#include "lbt/bilevel/bilevel.hpp"
#include "lbt/error.hpp"
#include "lbt/lab/runners.hpp"
#include "lbt/training/training.hpp"

namespace lbt::lab {
namespace {

using ad::Rng;
using ad::Tensor;
using ad::Var;

constexpr double kFdStep = 1e-5;
constexpr double kFdFloor = 1e-6;
constexpr double kStationarityLrPhi = 0.1;

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

Tensor jittered(Tensor t, Rng& rng, double amount) {
  Tensor j = ad::sample_uniform(rng, t.shape(), -amount, amount);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += j[i];
  return t;
}

// Direction with entries of magnitude in [0.5, 1] and random signs.
Tensor probe(Rng& rng, const ad::Shape& shape) {
  Tensor d = ad::sample_uniform(rng, shape, 0.5, 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (rng.uniform() < 0.5) d[i] = -d[i];
  }
  return d;
}

}  // namespace

std::vector<GradcheckCase> gradcheck_suite(double first_tol, double second_tol,
                                           std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 301);
  std::vector<GradcheckCase> out;
  auto first = [&](const std::string& name, const ad::ScalarFn& f, const Tensor& at) {
    auto rep = ad::finite_difference_check(f, at, kFdStep, kFdFloor);
    const double err = rep.non_finite ? INFINITY : rep.max_rel_error;
    out.push_back({name, 1, err, first_tol, err < first_tol});
  };
  auto second = [&](const std::string& name, const ad::ScalarFn& f, const Tensor& at) {
    auto rep = ad::hessian_vector_check(f, at, probe(rng, at.shape()), kFdStep, kFdFloor);
    const double err = rep.non_finite ? INFINITY : rep.max_rel_error;
    out.push_back({name, 2, err, second_tol, err < second_tol});
  };

  const auto ring = dist::make_dataset(dist::DatasetKind::kRing8);
  const Tensor x = dist::mog_sample(ring, 7, rng);

  // Estimator objectives, in phi and in the batch points.
  std::vector<std::unique_ptr<models::Estimator>> ests;
  ests.push_back(std::make_unique<models::GaussianEstimator>(2, true));
  ests.push_back(std::make_unique<models::MoGEstimator>(3, 2));
  ests.push_back(std::make_unique<models::VaeEstimator>(2, 2, std::vector<std::size_t>{5}));
  for (const auto& est : ests) {
    const std::string tag = est->exact() ? "f_E[" + est->kind() + "]" : "ELBO[vae]";
    const Tensor phi = jittered(est->init_params(rng), rng, 0.3);
    const Tensor noise = est->draw_noise(x.rows(), rng);
    auto in_phi = [&](const Var& p) { return est->log_likelihood(p, ad::constant(x), {}, noise); };
    auto in_x = [&](const Var& xs) {
      return est->log_likelihood(ad::constant(phi), ad::reshape(xs, x.shape()), {}, noise);
    };
    first(tag + " d/dphi", in_phi, phi);
    first(tag + " d/dx", in_x, x);
    second(tag + " H_phi v", in_phi, phi);
  }

  // GAN objective in psi and, through the generated batch, in theta.
  models::MlpGenerator gen(2, {6}, 2);
  const Tensor theta = gen.init_params(rng);
  const models::Noise gnoise = gen.draw_noise(6, rng);
  models::Discriminator disc(2, {5});
  const Tensor psi = jittered(disc.init_params(rng), rng, 0.2);
  auto gan_psi = [&](const Var& p) {
    return training::gan_objective(disc, p, ad::constant(x), {},
                                   ad::constant(gen.generate(ad::constant(theta), gnoise).value()),
                                   {});
  };
  first("f_GAN d/dpsi", gan_psi, psi);
  second("f_GAN H_psi v", gan_psi, psi);
  for (auto loss : {training::GanLoss::kSaturating, training::GanLoss::kNonSaturating}) {
    auto gan_theta = [&, loss](const Var& th) {
      return training::generator_gan_loss(disc, ad::constant(psi), gen.generate(th, gnoise), {},
                                           loss);
    };
    first("f_GAN generator loss [" + training::to_string(loss) + "] d/dtheta", gan_theta, theta);
  }

  // Surrogate f_G(phi^K(theta)) for every estimator and both inner optimizers.
  for (auto opt : {bilevel::InnerOptimizer::kGradientAscent,
                   bilevel::InnerOptimizer::kAdamUnrolled}) {
    for (const auto& est : ests) {
      bilevel::UnrollConfig cfg;
      cfg.steps = 3;
      cfg.eta = 0.1;
      cfg.optimizer = opt;
      bilevel::SurrogateInputs in{jittered(est->init_params(rng), rng, 0.2), gnoise,
                                  est->draw_noise(gnoise.count(), rng), x, {},
                                  est->draw_noise(x.rows(), rng)};
      auto f = [&](const Var& th) { return bilevel::surrogate_objective(gen, *est, th, in, cfg); };
      first("f_G o unroll[" + est->kind() + ", K=3, " + bilevel::to_string(opt) + "] d/dtheta", f,
            theta);
      if (opt == bilevel::InnerOptimizer::kGradientAscent) {
        bilevel::UnrollConfig one = cfg;
        one.steps = 1;
        auto g = [&](const Var& th) {
          return bilevel::surrogate_objective(gen, *est, th, in, one);
        };
        second("f_G o unroll[" + est->kind() + ", K=1] H_theta v", g, theta);
      }
    }
  }

  // Parametric mixture generator with the Gaussian estimator (the 1D toy).
  {
    models::ParametricMoGGenerator pg({0.5, 0.5}, Tensor(ad::Shape{2, 1}, 1.0));
    models::GaussianEstimator est(1, true);
    const models::Noise n = pg.draw_noise(9, rng);
    const Tensor data = dist::mog_sample(dist::make_dataset(dist::DatasetKind::kBimodal1d), 9, rng);
    bilevel::UnrollConfig cfg;
    cfg.steps = 3;
    cfg.eta = 0.1;
    bilevel::SurrogateInputs in{Tensor::vector({-1.0, 0.4}), n, {}, data, {}, {}};
    auto f = [&](const Var& th) { return bilevel::surrogate_objective(pg, est, th, in, cfg); };
    first("f_G o unroll[parametric_mog + gaussian, K=3] d/dtheta", f, Tensor::vector({-3.2, -2.8}));
  }
  return out;
}

InfluenceSweep influence_sweep(std::size_t instances, double eta, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 302);
  InfluenceSweep sweep;
  while (sweep.instances.size() < instances) {
    const std::size_t dim = sweep.instances.size() % 2 ? 2 : 1;
    models::MoGEstimator est(2, dim);
    dist::GaussianMixture src;
    src.weights = {0.5, 0.5};
    src.means = ad::sample_uniform(rng, {2, dim}, -2.0, 2.0);
    src.stds = ad::sample_uniform(rng, {2, dim}, 0.4, 1.0);
    const Tensor x = dist::mog_sample(src, 30, rng);
    auto fit = bilevel::fit_inner_optimum(est, est.params_from_mixture(src), x, {}, {});
    if (!fit.converged || !fit.negative_definite) {
      if (++sweep.regenerated > 10 * instances) {
        throw CheckFailure("influence sweep: too many instances without a strict inner maximum");
      }
      continue;
    }
    auto rep = bilevel::alignment_check(est, fit.phi, x, {}, {}, eta);
    sweep.instances.push_back({dim, rep.inner_product, rep.condition, rep.flagged});
    sweep.positive += rep.inner_product > 0.0;
  }
  return sweep;
}

StationarityReport stationarity_check(const ExperimentConfig& cfg) {
  training::TrainConfig tc = cfg.train;
  tc.method = training::Method::kLbt;
  tc.dataset = dist::DatasetKind::kBimodal1d;
  const auto data = dist::make_dataset(tc.dataset);
  tc.generator.kind = "parametric_mog";
  tc.generator.components = data.components();
  tc.generator.std = data.stds[0];
  tc.generator.init_means = data.means.values();
  tc.estimator.kind = "gaussian";
  tc.estimator.learn_log_std = true;
  tc.estimator.init.clear();
  // Adam rescales the vanishing estimator gradient at the optimum to a step
  // of order lr, which would push phi off phi* by itself. Plain gradient
  // ascent with a rate that keeps phi on phi*(theta) leaves the fixed point
  // intact; the generator keeps its configured Adam.
  tc.estimator_optimizer = training::EstimatorOptimizer::kSgd;
  tc.lr_phi = kStationarityLrPhi;
  tc.unroll.population = true;
  tc.iterations = cfg.check.stationarity_iterations;
  tc.record_every = std::max<std::size_t>(tc.iterations, 1);
  tc.metric_every = 0;

  training::Trainer trainer(tc);
  const models::Noise q = trainer.generator().population_noise(tc.unroll.population_points);
  Tensor x;
  {
    ad::NoGradGuard guard;
    x = trainer.generator().generate(ad::constant(trainer.theta()), q).value();
  }
  auto fit = bilevel::fit_inner_optimum(*trainer.estimator(), trainer.phi(), x, q.weights, {});
  if (!fit.converged) throw CheckFailure("stationarity: the estimator optimum was not reached");
  trainer.set_phi(fit.phi);

  StationarityReport rep;
  {
    // generator_direction consumes no randomness in population mode, so this
    // probe leaves the run below untouched.
    training::Trainer probe_trainer(tc);
    probe_trainer.set_phi(fit.phi);
    rep.hypergradient_norm = norm(probe_trainer.generator_direction());
  }
  const Tensor start = trainer.theta();
  Tensor prev = start;
  for (std::size_t it = 0; it < tc.iterations; ++it) {
    trainer.iterate();
    double step = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i) {
      step += (trainer.theta()[i] - prev[i]) * (trainer.theta()[i] - prev[i]);
    }
    rep.path_length += std::sqrt(step);
    prev = trainer.theta();
  }
  for (std::size_t i = 0; i < start.size(); ++i) rep.movement += std::abs(prev[i] - start[i]);
  rep.iterations = tc.iterations;
  rep.passed = rep.hypergradient_norm < cfg.check.stationarity_gradient_tolerance &&
               rep.movement < cfg.check.stationarity_movement_tolerance;
  return rep;
}

long first_reaching(const SensitivityCurve& c, double threshold) {
  for (std::size_t i = 0; i < c.f_g.size(); ++i) {
    if (c.f_g[i] >= threshold) return static_cast<long>(c.iterations[i]);
  }
  return -1;
}

SensitivityStudy sensitivity_study(const ExperimentConfig& cfg,
                                   const std::vector<std::uint64_t>& seeds, unsigned threads) {
  struct Job {
    std::string axis;
    std::size_t value;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::uint64_t s : seeds) {
    for (std::size_t k : cfg.check.k_values) jobs.push_back({"K", k, s});
    for (std::size_t m : cfg.check.m_values) jobs.push_back({"M", m, s});
  }
  SensitivityStudy study;
  study.curves.resize(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    training::TrainConfig tc = cfg.train;
    tc.seed = jobs[i].seed;
    if (jobs[i].axis == "K") tc.unroll.steps = jobs[i].value;
    else tc.estimator_steps = jobs[i].value;
    SensitivityCurve& c = study.curves[i];
    c.axis = jobs[i].axis;
    c.value = jobs[i].value;
    c.seed = jobs[i].seed;
    auto traj = training::train(tc);
    for (const auto& r : traj.rows) {
      c.iterations.push_back(r.iteration);
      c.f_g.push_back(r.f_g);
    }
    c.failed = traj.failure.has_value();
  });

  const auto [kmin, kmax] = std::minmax_element(cfg.check.k_values.begin(), cfg.check.k_values.end());
  const auto [mmin, mmax] = std::minmax_element(cfg.check.m_values.begin(), cfg.check.m_values.end());
  auto find = [&](const std::string& axis, std::size_t value, std::uint64_t seed) {
    for (const auto& c : study.curves) {
      if (c.axis == axis && c.value == value && c.seed == seed) return &c;
    }
    throw ContractError("sensitivity study: missing curve");
  };
  const double thr = cfg.check.f_g_threshold;
  for (std::uint64_t s : seeds) {
    const SensitivityCurve* lo_k = find("K", *kmin, s);
    const SensitivityCurve* hi_k = find("K", *kmax, s);
    const SensitivityCurve* lo_m = find("M", *mmin, s);
    const SensitivityCurve* hi_m = find("M", *mmax, s);
    const double f_lo = lo_k->f_g.empty() ? NAN : lo_k->f_g.back();
    const double f_hi = hi_k->f_g.empty() ? NAN : hi_k->f_g.back();
    const bool k_win = !lo_k->failed && !hi_k->failed && f_hi >= f_lo;
    const long r_lo = first_reaching(*lo_m, thr);
    const long r_hi = first_reaching(*hi_m, thr);
    const bool m_win = !hi_m->failed && r_hi >= 0 && (r_lo < 0 || r_hi < r_lo);
    study.k_wins += k_win;
    study.m_wins += m_win;
    study.per_seed.push_back({{"seed", s},
                              {"final_f_g_k_min", f_lo},
                              {"final_f_g_k_max", f_hi},
                              {"k_max_at_least_k_min", k_win},
                              {"reach_iteration_m_min", r_lo},
                              {"reach_iteration_m_max", r_hi},
                              {"m_max_reaches_first", m_win}});
  }
  study.seeds = seeds.size();
  const double need = cfg.check.required_fraction * static_cast<double>(seeds.size());
  study.k_passed = static_cast<double>(study.k_wins) >= need - 1e-12;
  study.m_passed = static_cast<double>(study.m_wins) >= need - 1e-12;
  return study;
}

}  // namespace lbt::lab
