#include "lbt/training/training.hpp"

#include <cmath>
#include <utility>

#include "lbt/error.hpp"

namespace lbt::training {
namespace {

// Stream ids for Rng::stream. Fixed so that trajectories stay comparable
// across versions.
enum StreamId : std::uint64_t {
  kInit = 1,
  kEstimatorBatch = 2,
  kEstimatorNoise = 3,
  kDiscriminatorBatch = 4,
  kGeneratorBatch = 5,
  kEval = 6,
  kMetrics = 7,
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string("adam_step: ") + what + " " + ad::shape_string(a.shape()) +
                     " vs " + ad::shape_string(b.shape()));
  }
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

void require_finite(const Tensor& t, const std::string& what, long step) {
  if (!t.all_finite()) throw NumericError(what + " is not finite", step);
}

double value_of(const Var& v) { return v.value().item(); }

}  // namespace

AdamState AdamState::like(const Tensor& params) {
  AdamState s;
  s.m = Tensor(params.shape(), 0.0);
  s.v = Tensor(params.shape(), 0.0);
  return s;
}

void adam_step(AdamState& state, Tensor& params, const Tensor& grad, double lr,
               Direction direction) {
  check_same_shape(params, grad, "gradient");
  check_same_shape(params, state.m, "first moment");
  check_same_shape(params, state.v, "second moment");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double sign = direction == Direction::kAscent ? 1.0 : -1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] += sign * lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kLbt: return "lbt";
    case Method::kLbtGan: return "lbt_gan";
    case Method::kGan: return "gan";
  }
  return "?";
}

std::string to_string(GanLoss l) {
  return l == GanLoss::kSaturating ? "saturating" : "non_saturating";
}

std::string to_string(EstimatorOptimizer o) {
  return o == EstimatorOptimizer::kAdam ? "adam" : "sgd";
}

Method method_from_string(const std::string& s) {
  if (s == "lbt") return Method::kLbt;
  if (s == "lbt_gan") return Method::kLbtGan;
  if (s == "gan") return Method::kGan;
  throw ContractError("unknown method '" + s + "' (expected lbt, lbt_gan or gan)");
}

GanLoss gan_loss_from_string(const std::string& s) {
  if (s == "saturating") return GanLoss::kSaturating;
  if (s == "non_saturating") return GanLoss::kNonSaturating;
  throw ContractError("unknown gan_loss '" + s + "' (expected saturating or non_saturating)");
}

EstimatorOptimizer estimator_optimizer_from_string(const std::string& s) {
  if (s == "adam") return EstimatorOptimizer::kAdam;
  if (s == "sgd") return EstimatorOptimizer::kSgd;
  throw ContractError("unknown estimator optimizer '" + s + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  unroll.validate();
  if (estimator_steps < 1) throw ContractError("train.estimator_steps (M) must be >= 1");
  if (!(lambda_g >= 0.0) || !std::isfinite(lambda_g)) {
    throw ContractError("train.lambda_g must be finite and >= 0");
  }
  for (double lr : {lr_theta, lr_phi, lr_psi}) {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
      throw ContractError("train learning rates must be positive and finite");
    }
  }
  if (uses_discriminator() && discriminator_steps < 1) {
    throw ContractError("train.discriminator_steps must be >= 1 when a discriminator is used");
  }
  if (batch_generator < 1 || batch_estimator < 1 || batch_discriminator < 1 ||
      batch_data < 1 || eval_batch < 1) {
    throw ContractError("train batch sizes must be >= 1");
  }
  if (record_every < 1) throw ContractError("train.record_every must be >= 1");
  if (metric_samples < 2) throw ContractError("train.metric_samples must be >= 2");
  if (generator.kind != "mlp" && generator.kind != "parametric_mog") {
    throw ContractError("generator.kind must be mlp or parametric_mog");
  }
  if (estimator.kind != "gaussian" && estimator.kind != "mog" && estimator.kind != "vae") {
    throw ContractError("estimator.kind must be gaussian, mog or vae");
  }
  if (generator.kind == "parametric_mog") {
    if (generator.components < 1) throw ContractError("generator.components must be >= 1");
    if (!(generator.std > 0.0)) throw ContractError("generator.std must be positive");
  }
  if (unroll.population && generator.kind != "parametric_mog") {
    throw ContractError("population mode needs a parametric_mog generator");
  }
}

Method TrainConfig::effective_method() const {
  return method == Method::kLbtGan && lambda_g == 0.0 ? Method::kLbt : method;
}

std::unique_ptr<models::Generator> make_generator(const GeneratorSpec& spec, std::size_t dim) {
  if (spec.kind == "parametric_mog") {
    std::vector<double> w(spec.components, 1.0 / static_cast<double>(spec.components));
    return std::make_unique<models::ParametricMoGGenerator>(
        std::move(w), Tensor(ad::Shape{spec.components, dim}, spec.std));
  }
  if (spec.kind == "mlp") {
    return std::make_unique<models::MlpGenerator>(spec.latent, spec.hidden, dim);
  }
  throw ContractError("unknown generator kind '" + spec.kind + "'");
}

std::unique_ptr<models::Estimator> make_estimator(const EstimatorSpec& spec, std::size_t dim) {
  if (spec.kind == "gaussian") {
    return std::make_unique<models::GaussianEstimator>(dim, spec.learn_log_std);
  }
  if (spec.kind == "mog") return std::make_unique<models::MoGEstimator>(spec.components, dim);
  if (spec.kind == "vae") {
    return std::make_unique<models::VaeEstimator>(dim, spec.latent, spec.hidden, spec.samples);
  }
  throw ContractError("unknown estimator kind '" + spec.kind + "'");
}

Var gan_objective(const models::Discriminator& disc, const Var& psi, const Var& real,
                  const std::vector<double>& real_weights, const Var& fake,
                  const std::vector<double>& fake_weights) {
  return models::weighted_mean(disc.log_prob_real(psi, real), real_weights) +
         models::weighted_mean(disc.log_prob_fake(psi, fake), fake_weights);
}

Var generator_gan_loss(const models::Discriminator& disc, const Var& psi, const Var& fake,
                       const std::vector<double>& fake_weights, GanLoss loss) {
  if (loss == GanLoss::kSaturating) {
    return models::weighted_mean(disc.log_prob_fake(psi, fake), fake_weights);
  }
  return ad::neg(models::weighted_mean(disc.log_prob_real(psi, fake), fake_weights));
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      data_(dist::make_dataset(cfg_.dataset)),
      rng_estimator_(Rng::stream(cfg_.seed, kEstimatorBatch)),
      rng_estimator_noise_(Rng::stream(cfg_.seed, kEstimatorNoise)),
      rng_disc_(Rng::stream(cfg_.seed, kDiscriminatorBatch)),
      rng_generator_(Rng::stream(cfg_.seed, kGeneratorBatch)),
      rng_metrics_(Rng::stream(cfg_.seed, kMetrics)) {
  cfg_.validate();
  const std::size_t dim = data_.dim();
  modes_ = metrics::ModeSpec::from(data_);
  gen_ = make_generator(cfg_.generator, dim);
  if (cfg_.uses_estimator()) est_ = make_estimator(cfg_.estimator, dim);
  if (cfg_.uses_discriminator()) {
    disc_ = std::make_unique<models::Discriminator>(dim, cfg_.discriminator.hidden);
  }
  if (cfg_.unroll.population) {
    if (dim != 1) throw ContractError("population mode needs a one-dimensional dataset");
    data_sampler_ = std::make_unique<models::ParametricMoGGenerator>(data_.weights, data_.stds);
  }

  // Initial parameters, in a fixed order from one stream.
  Rng init = Rng::stream(cfg_.seed, kInit);
  theta_ = gen_->init_params(init);
  if (cfg_.generator.kind == "parametric_mog") {
    if (cfg_.generator.init_means.empty()) {
      theta_ = ad::sample_standard_normal(init, theta_.shape());
    } else {
      if (cfg_.generator.init_means.size() != theta_.size()) {
        throw ContractError("generator.init_means needs " + std::to_string(theta_.size()) +
                            " values");
      }
      theta_ = Tensor(theta_.shape(), cfg_.generator.init_means);
    }
  }
  if (est_) {
    phi_ = est_->init_params(init);
    if (!cfg_.estimator.init.empty()) {
      if (cfg_.estimator.init.size() != phi_.size()) {
        throw ContractError("estimator.init needs " + std::to_string(phi_.size()) + " values");
      }
      phi_ = Tensor(phi_.shape(), cfg_.estimator.init);
    }
  }
  if (disc_) psi_ = disc_->init_params(init);
  adam_theta_ = AdamState::like(theta_);
  adam_phi_ = AdamState::like(phi_);
  adam_psi_ = AdamState::like(psi_);

  // Fixed evaluation batches.
  Rng eval = Rng::stream(cfg_.seed, kEval);
  if (cfg_.unroll.population) {
    eval_noise_ = gen_->population_noise(cfg_.unroll.population_points);
  } else {
    eval_noise_ = gen_->draw_noise(cfg_.eval_batch, eval);
  }
  eval_data_ = data_batch(cfg_.eval_batch, eval);
  if (est_) {
    eval_estimator_noise_gen_ = est_->draw_noise(eval_noise_.count(), eval);
    eval_estimator_noise_data_ = est_->draw_noise(eval_data_.x.rows(), eval);
  }
  eval_disc_noise_ = eval_noise_;
  eval_disc_data_ = eval_data_;
}

void Trainer::set_theta(Tensor t) {
  gen_->layout().check(t, "set_theta");
  theta_ = std::move(t);
}

void Trainer::set_phi(Tensor p) {
  if (!est_) throw ContractError("set_phi: this method has no estimator");
  est_->layout().check(p, "set_phi");
  phi_ = std::move(p);
}

void Trainer::set_psi(Tensor p) {
  if (!disc_) throw ContractError("set_psi: this method has no discriminator");
  disc_->layout().check(p, "set_psi");
  psi_ = std::move(p);
}

Trainer::Batch Trainer::generated_batch(std::size_t n, Rng& rng, models::Noise& noise) const {
  noise = cfg_.unroll.population ? gen_->population_noise(cfg_.unroll.population_points)
                                 : gen_->draw_noise(n, rng);
  ad::NoGradGuard guard;
  return {gen_->generate(ad::constant(theta_), noise).value(), noise.weights};
}

Trainer::Batch Trainer::data_batch(std::size_t n, Rng& rng) const {
  if (cfg_.unroll.population) {
    models::Noise q = data_sampler_->population_noise(cfg_.unroll.population_points);
    ad::NoGradGuard guard;
    Tensor means = Tensor::vector(data_.means.values());
    return {data_sampler_->generate(ad::constant(means), q).value(), q.weights};
  }
  return {dist::mog_sample(data_, n, rng), {}};
}

void Trainer::estimator_step() {
  if (!est_) throw ContractError("estimator_step: this method has no estimator");
  models::Noise noise;
  Batch b = generated_batch(cfg_.batch_estimator, rng_estimator_, noise);
  Tensor en = est_->draw_noise(b.x.rows(), rng_estimator_noise_);
  Tensor g = bilevel::estimator_gradient(*est_, phi_, b.x, b.weights, en);
  require_finite(g, "estimator gradient", static_cast<long>(adam_phi_.t));
  if (cfg_.estimator_optimizer == EstimatorOptimizer::kAdam) {
    adam_step(adam_phi_, phi_, g, cfg_.lr_phi, Direction::kAscent);
  } else {
    for (std::size_t i = 0; i < phi_.size(); ++i) phi_[i] += cfg_.lr_phi * g[i];
    ++adam_phi_.t;
  }
}

void Trainer::discriminator_step() {
  if (!disc_) throw ContractError("discriminator_step: this method has no discriminator");
  models::Noise noise;
  Batch fake = generated_batch(cfg_.batch_discriminator, rng_disc_, noise);
  Batch real = data_batch(cfg_.batch_discriminator, rng_disc_);
  Var psi = ad::parameter(psi_);
  Var obj = gan_objective(*disc_, psi, ad::constant(real.x), real.weights,
                          ad::constant(fake.x), fake.weights);
  Tensor g = ad::gradient(obj, psi, {.create_graph = false}).value();
  require_finite(g, "discriminator gradient", static_cast<long>(adam_psi_.t));
  adam_step(adam_psi_, psi_, g, cfg_.lr_psi, Direction::kAscent);
}

Tensor Trainer::generator_direction() {
  const Method method = cfg_.effective_method();
  models::Noise noise = cfg_.unroll.population
                            ? gen_->population_noise(cfg_.unroll.population_points)
                            : gen_->draw_noise(cfg_.batch_generator, rng_generator_);
  Tensor direction(theta_.shape(), 0.0);

  if (method != Method::kGan) {
    bilevel::SurrogateInputs in;
    in.phi0 = phi_;
    in.generator_noise = noise;
    in.estimator_noise_generated = est_->draw_noise(noise.count(), rng_generator_);
    Batch d = data_batch(cfg_.batch_data, rng_generator_);
    in.data = d.x;
    in.data_weights = d.weights;
    in.estimator_noise_data = est_->draw_noise(d.x.rows(), rng_generator_);
    direction = bilevel::hypergradient(*gen_, *est_, theta_, in, cfg_.unroll).gradient;
  }
  if (method != Method::kLbt) {
    Var th = ad::parameter(theta_);
    Var loss = generator_gan_loss(*disc_, ad::constant(psi_), gen_->generate(th, noise),
                                  noise.weights, cfg_.gan_loss);
    Tensor g = ad::gradient(loss, th, {.create_graph = false}).value();
    const double weight = method == Method::kGan ? 1.0 : cfg_.lambda_g;
    for (std::size_t i = 0; i < g.size(); ++i) direction[i] -= weight * g[i];
  }
  require_finite(direction, "generator update direction", static_cast<long>(adam_theta_.t));
  return direction;
}

void Trainer::generator_step() {
  Tensor d = generator_direction();
  adam_step(adam_theta_, theta_, d, cfg_.lr_theta, Direction::kAscent);
  require_finite(theta_, "generator parameters", static_cast<long>(adam_theta_.t));
}

void Trainer::iterate() {
  if (est_) {
    for (std::size_t m = 0; m < cfg_.estimator_steps; ++m) estimator_step();
  }
  if (disc_) {
    for (std::size_t s = 0; s < cfg_.discriminator_steps; ++s) discriminator_step();
  }
  generator_step();
}

double Trainer::eval_f_e() const {
  if (!est_) return kNotRecorded;
  ad::NoGradGuard guard;
  Var x = gen_->generate(ad::constant(theta_), eval_noise_);
  return value_of(est_->log_likelihood(ad::constant(phi_), x, eval_noise_.weights,
                                       eval_estimator_noise_gen_));
}

double Trainer::eval_f_g() const {
  if (!est_) return kNotRecorded;
  ad::NoGradGuard guard;
  return value_of(est_->log_likelihood(ad::constant(phi_), ad::constant(eval_data_.x),
                                       eval_data_.weights, eval_estimator_noise_data_));
}

Tensor Trainer::sample(std::size_t n, Rng& rng) const {
  models::Noise noise = gen_->draw_noise(n, rng);
  ad::NoGradGuard guard;
  return gen_->generate(ad::constant(theta_), noise).value();
}

std::vector<std::string> Trainer::theta_names() const {
  std::vector<std::string> names;
  if (theta_.size() > kSnapshotLimit) return names;
  for (const auto& block : gen_->layout().blocks()) {
    for (std::size_t i = 0; i < block.size(); ++i) {
      names.push_back(block.size() == 1 ? block.name : block.name + "_" + std::to_string(i));
    }
  }
  return names;
}

TrajectoryRow Trainer::record(std::size_t iteration, bool with_metrics) {
  TrajectoryRow row;
  row.iteration = iteration;
  if (theta_.size() <= kSnapshotLimit) row.theta = theta_.values();
  row.theta_norm = norm(theta_);
  row.f_e = eval_f_e();
  row.f_g = eval_f_g();
  if (disc_) {
    ad::NoGradGuard guard;
    Var fake = gen_->generate(ad::constant(theta_), eval_disc_noise_);
    Var psi = ad::constant(psi_);
    row.f_gan = value_of(gan_objective(*disc_, psi, ad::constant(eval_disc_data_.x),
                                       eval_disc_data_.weights, fake, eval_disc_noise_.weights));
    row.gen_loss = value_of(generator_gan_loss(*disc_, psi, fake, eval_disc_noise_.weights,
                                               cfg_.gan_loss));
  }
  if (with_metrics) {
    Tensor x = sample(cfg_.metric_samples, rng_metrics_);
    metrics::MetricReport rep = metrics::evaluate(x, modes_);
    row.hq_fraction = rep.high_quality_fraction;
    row.modes_covered = static_cast<double>(rep.modes_covered);
    row.intra_mode_kl = rep.intra_mode_kl;
  }
  return row;
}

Trajectory Trainer::run(const RowCallback& on_row) {
  Trajectory traj;
  traj.theta_names = theta_names();
  auto emit = [&](std::size_t it) {
    const bool last = it == cfg_.iterations;
    const bool metric_due = last || (cfg_.metric_every > 0 && it % cfg_.metric_every == 0);
    if (!(last || it % cfg_.record_every == 0 || metric_due)) return;
    traj.rows.push_back(record(it, metric_due));
    if (on_row) on_row(traj.rows.back());
  };
  std::size_t it = 0;
  try {
    emit(0);
    for (it = 1; it <= cfg_.iterations; ++it) {
      iterate();
      emit(it);
    }
  } catch (const NumericError& e) {
    traj.failure = Failure{it, e.step(), e.what()};
  } catch (const DomainError& e) {
    // A variance or denominator that underflowed mid-run is the same kind of
    // breakdown as a non-finite loss.
    traj.failure = Failure{it, -1, e.what()};
  }
  traj.theta = theta_;
  traj.phi = phi_;
  traj.psi = psi_;
  return traj;
}

Trajectory train(const TrainConfig& cfg, const RowCallback& on_row) {
  return Trainer(cfg).run(on_row);
}

Trajectory train_lbt(TrainConfig cfg, const RowCallback& on_row) {
  cfg.method = Method::kLbt;
  return train(cfg, on_row);
}

Trajectory train_lbt_gan(TrainConfig cfg, const RowCallback& on_row) {
  cfg.method = Method::kLbtGan;
  return train(cfg, on_row);
}

Trajectory train_gan(TrainConfig cfg, const RowCallback& on_row) {
  cfg.method = Method::kGan;
  return train(cfg, on_row);
}

}  // namespace lbt::training
