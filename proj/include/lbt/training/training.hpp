#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lbt/bilevel/bilevel.hpp"
#include "lbt/dist/datasets.hpp"
#include "lbt/metrics/metrics.hpp"
#include "lbt/models/models.hpp"

namespace lbt::training {

using ad::Rng;
using ad::Tensor;
using ad::Var;

// ---------------------------------------------------------------------------
// Adam

enum class Direction { kAscent, kDescent };

struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zero moments shaped like `params`.
  static AdamState like(const Tensor& params);
};

/// One bias-corrected Adam update of `params` in place. ShapeError when the
/// gradient, parameters and moments disagree.
void adam_step(AdamState& state, Tensor& params, const Tensor& grad, double lr,
               Direction direction);

// ---------------------------------------------------------------------------
// Configuration

enum class Method { kLbt, kLbtGan, kGan };
enum class GanLoss { kSaturating, kNonSaturating };
enum class EstimatorOptimizer { kAdam, kSgd };

std::string to_string(Method m);
std::string to_string(GanLoss l);
std::string to_string(EstimatorOptimizer o);
Method method_from_string(const std::string& s);
GanLoss gan_loss_from_string(const std::string& s);
EstimatorOptimizer estimator_optimizer_from_string(const std::string& s);

struct GeneratorSpec {
  std::string kind = "mlp";  // "mlp" or "parametric_mog"
  // parametric_mog: equal weights, one shared std, means are theta.
  std::size_t components = 2;
  double std = 1.0;
  std::vector<double> init_means;  // row-major [K, D]; empty => N(0, 1) draw
  // mlp
  std::size_t latent = 2;
  std::vector<std::size_t> hidden{64, 64};
};

struct EstimatorSpec {
  std::string kind = "vae";  // "gaussian", "mog" or "vae"
  bool learn_log_std = false;  // gaussian
  std::size_t components = 8;  // mog
  std::size_t latent = 2;      // vae
  std::vector<std::size_t> hidden{32, 32};
  std::size_t samples = 1;     // vae ELBO draws per point
  std::vector<double> init;    // flat phi; empty => the estimator's default
};

struct DiscriminatorSpec {
  std::vector<std::size_t> hidden{32, 32};
};

struct TrainConfig {
  Method method = Method::kLbt;
  dist::DatasetKind dataset = dist::DatasetKind::kRing8;
  GeneratorSpec generator;
  EstimatorSpec estimator;
  DiscriminatorSpec discriminator;
  bilevel::UnrollConfig unroll;  // K, inner eta, population mode

  std::size_t estimator_steps = 15;     // M
  std::size_t discriminator_steps = 1;
  double lambda_g = 1.0;
  double lr_theta = 1e-3;
  double lr_phi = 1e-3;
  double lr_psi = 1e-3;
  EstimatorOptimizer estimator_optimizer = EstimatorOptimizer::kAdam;
  GanLoss gan_loss = GanLoss::kSaturating;

  std::size_t batch_generator = 128;      // generated points per hypergradient
  std::size_t batch_estimator = 128;      // generated points per estimator step
  std::size_t batch_discriminator = 128;  // real and fake points per D step
  std::size_t batch_data = 128;           // data points scored by f_G
  std::size_t eval_batch = 512;           // fixed batches behind f_E / f_G records

  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  std::size_t record_every = 1;
  std::size_t metric_every = 0;  // 0: metrics only on the final record
  std::size_t metric_samples = 2000;

  /// Throws ContractError naming the violated invariant.
  void validate() const;
  /// The method actually run: LBT-GAN with lambda_G = 0 is plain LBT.
  Method effective_method() const;
  bool uses_estimator() const { return effective_method() != Method::kGan; }
  bool uses_discriminator() const { return effective_method() != Method::kLbt; }
};

std::unique_ptr<models::Generator> make_generator(const GeneratorSpec& spec, std::size_t dim);
std::unique_ptr<models::Estimator> make_estimator(const EstimatorSpec& spec, std::size_t dim);

// ---------------------------------------------------------------------------
// Trajectory

constexpr double kNotRecorded = std::numeric_limits<double>::quiet_NaN();

struct TrajectoryRow {
  std::size_t iteration = 0;
  std::vector<double> theta;  // full snapshot for small generators, else empty
  double theta_norm = 0.0;
  double f_e = kNotRecorded;       // estimator objective on the fixed generated batch
  double f_g = kNotRecorded;       // estimator log-likelihood of the fixed data batch
  double f_gan = kNotRecorded;     // discriminator objective on the fixed batches
  double gen_loss = kNotRecorded;  // generator's GAN loss (variant-dependent)
  double hq_fraction = kNotRecorded;
  double modes_covered = kNotRecorded;
  double intra_mode_kl = kNotRecorded;
};

struct Failure {
  std::size_t iteration = 0;
  long step = -1;
  std::string what;
};

struct Trajectory {
  std::vector<std::string> theta_names;  // columns of TrajectoryRow::theta
  std::vector<TrajectoryRow> rows;
  std::optional<Failure> failure;
  Tensor theta;  // final parameters
  Tensor phi;
  Tensor psi;
};

using RowCallback = std::function<void(const TrajectoryRow&)>;

/// Largest generator for which rows carry a full theta snapshot.
constexpr std::size_t kSnapshotLimit = 16;

// ---------------------------------------------------------------------------
// GAN objective

/// f_GAN = E_real log D(x) + E_fake log(1 - D(x)), weighted means.
Var gan_objective(const models::Discriminator& disc, const Var& psi, const Var& real,
                  const std::vector<double>& real_weights, const Var& fake,
                  const std::vector<double>& fake_weights);

/// Loss the generator minimises: E log(1 - D) (saturating) or -E log D
/// (non-saturating).
Var generator_gan_loss(const models::Discriminator& disc, const Var& psi, const Var& fake,
                       const std::vector<double>& fake_weights, GanLoss loss);

// ---------------------------------------------------------------------------
// Trainer

/// One training run. Every source of randomness has its own stream derived
/// from the seed, so the run is reproducible and switching a component off
/// does not perturb the draws of the others.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  const models::Generator& generator() const { return *gen_; }
  const models::Estimator* estimator() const { return est_.get(); }
  const models::Discriminator* discriminator() const { return disc_.get(); }
  const dist::GaussianMixture& data() const { return data_; }

  const Tensor& theta() const { return theta_; }
  const Tensor& phi() const { return phi_; }
  const Tensor& psi() const { return psi_; }
  void set_theta(Tensor t);
  void set_phi(Tensor p);
  void set_psi(Tensor p);

  /// One ascent step of the estimator on a fresh generated batch.
  void estimator_step();
  /// One ascent step of the discriminator on fresh real and fake batches.
  void discriminator_step();
  /// The ascent direction applied to theta by the next generator step,
  /// computed on fresh batches (exposed for tests).
  Tensor generator_direction();
  /// generator_direction() followed by one Adam step on theta.
  void generator_step();
  /// A full outer iteration: M estimator steps, discriminator steps, one
  /// generator step (each only when the method uses that component).
  void iterate();

  /// f_E of the current phi on the fixed evaluation noise pushed through the
  /// current generator.
  double eval_f_e() const;
  /// Log-likelihood of the fixed evaluation data batch under the current phi.
  double eval_f_g() const;

  TrajectoryRow record(std::size_t iteration, bool with_metrics);
  /// Generator samples [n, D] drawn from a dedicated stream.
  Tensor sample(std::size_t n, Rng& rng) const;

  /// Runs the configured iteration budget. A NumericError or DomainError
  /// ends the run with the trajectory so far and a failure record.
  Trajectory run(const RowCallback& on_row = {});

  std::vector<std::string> theta_names() const;

 private:
  struct Batch {
    Tensor x;
    std::vector<double> weights;
  };
  Batch generated_batch(std::size_t n, Rng& rng, models::Noise& noise) const;
  Batch data_batch(std::size_t n, Rng& rng) const;

  TrainConfig cfg_;
  dist::GaussianMixture data_;
  std::unique_ptr<models::Generator> gen_;
  std::unique_ptr<models::Estimator> est_;
  std::unique_ptr<models::Discriminator> disc_;
  std::unique_ptr<models::ParametricMoGGenerator> data_sampler_;  // population data
  metrics::ModeSpec modes_;

  Tensor theta_, phi_, psi_;
  AdamState adam_theta_, adam_phi_, adam_psi_;

  Rng rng_estimator_, rng_estimator_noise_, rng_disc_, rng_generator_, rng_metrics_;

  models::Noise eval_noise_;
  Tensor eval_estimator_noise_gen_;
  Batch eval_data_;
  Tensor eval_estimator_noise_data_;
  models::Noise eval_disc_noise_;
  Batch eval_disc_data_;
};

Trajectory train(const TrainConfig& cfg, const RowCallback& on_row = {});
/// The three loops with the method forced; other fields are taken as given.
Trajectory train_lbt(TrainConfig cfg, const RowCallback& on_row = {});
Trajectory train_lbt_gan(TrainConfig cfg, const RowCallback& on_row = {});
Trajectory train_gan(TrainConfig cfg, const RowCallback& on_row = {});

}  // namespace lbt::training
