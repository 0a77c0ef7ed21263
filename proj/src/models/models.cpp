#include "lbt/models/models.hpp"

#include <cmath>
#include <numbers>

#include "lbt/error.hpp"

namespace lbt::models {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void require_dim(const Var& x, std::size_t dim, const std::string& who) {
  if (x.shape().size() != 2 || x.shape()[1] != dim) {
    throw ShapeError(who + ": expected samples of shape [n, " +
                     std::to_string(dim) + "], got " +
                     ad::shape_string(x.shape()));
  }
}

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden,
                               std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

// ---------------------------------------------------------------- layout

std::size_t ParamLayout::add(std::string name, Shape shape) {
  ParamBlock b{std::move(name), std::move(shape), total_};
  total_ += b.size();
  blocks_.push_back(std::move(b));
  return blocks_.size() - 1;
}

Var ParamLayout::view(const Var& flat, std::size_t i) const {
  const ParamBlock& b = blocks_.at(i);
  return ad::reshape(ad::slice(flat, 0, b.offset, b.size()), b.shape);
}

Tensor ParamLayout::extract(const Tensor& flat, std::size_t i) const {
  const ParamBlock& b = blocks_.at(i);
  Tensor out(b.shape);
  for (std::size_t j = 0; j < b.size(); ++j) out[j] = flat[b.offset + j];
  return out;
}

void ParamLayout::assign(Tensor& flat, std::size_t i, const Tensor& value) const {
  const ParamBlock& b = blocks_.at(i);
  if (value.size() != b.size()) {
    throw ShapeError("assign: block '" + b.name + "' has " +
                     std::to_string(b.size()) + " entries, value " +
                     std::to_string(value.size()));
  }
  for (std::size_t j = 0; j < b.size(); ++j) flat[b.offset + j] = value[j];
}

void ParamLayout::check(const Tensor& flat, const std::string& who) const {
  if (flat.shape().size() != 1 || flat.size() != total_) {
    throw ShapeError(who + ": expected a flat parameter vector of length " +
                     std::to_string(total_) + ", got " +
                     ad::shape_string(flat.shape()));
  }
}

// ---------------------------------------------------------------- MLP

Mlp::Mlp(std::vector<std::size_t> widths, ParamLayout& layout,
         const std::string& prefix)
    : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ContractError("Mlp needs at least two widths");
  for (std::size_t w : widths_) {
    if (w == 0) throw ContractError("Mlp widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weight_blocks_.push_back(layout.add(prefix + "W" + std::to_string(l),
                                        {widths_[l], widths_[l + 1]}));
    bias_blocks_.push_back(
        layout.add(prefix + "b" + std::to_string(l), {1, widths_[l + 1]}));
  }
}

Var Mlp::forward(const ParamLayout& layout, const Var& flat, const Var& x) const {
  require_dim(x, input_dim(), "Mlp::forward");
  Var h = x;
  const std::size_t layers = weight_blocks_.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::matmul(h, layout.view(flat, weight_blocks_[l])) +
        layout.view(flat, bias_blocks_[l]);
    if (l + 1 < layers) h = ad::tanh(h);
  }
  return h;
}

void Mlp::init(const ParamLayout& layout, Tensor& flat, Rng& rng) const {
  for (std::size_t l = 0; l < weight_blocks_.size(); ++l) {
    const double fan = static_cast<double>(widths_[l] + widths_[l + 1]);
    const double a = std::sqrt(6.0 / fan);
    const ParamBlock& w = layout.block(weight_blocks_[l]);
    layout.assign(flat, weight_blocks_[l], ad::sample_uniform(rng, w.shape, -a, a));
    layout.assign(flat, bias_blocks_[l], Tensor(layout.block(bias_blocks_[l]).shape, 0.0));
  }
}

Var weighted_mean(const Var& rows, const std::vector<double>& weights) {
  if (weights.empty()) return ad::mean(rows);
  return ad::weighted_sum(rows, Tensor::vector(weights));
}

// ---------------------------------------------------------------- generators

Noise Generator::population_noise(std::size_t) const {
  throw ContractError("population mode is only available for one-dimensional "
                      "parametric_mog generators (got " + kind() + ")");
}

ParametricMoGGenerator::ParametricMoGGenerator(std::vector<double> weights,
                                               Tensor stds)
    : weights_(std::move(weights)), stds_(std::move(stds)) {
  dist::GaussianMixture probe{weights_, Tensor(stds_.shape(), 0.0), stds_};
  dist::validate(probe);
  layout_.add("means", {weights_.size(), stds_.cols()});
}

Tensor ParametricMoGGenerator::init_params(Rng&) const {
  return Tensor(Shape{layout_.size()}, 0.0);
}

Noise ParametricMoGGenerator::draw_noise(std::size_t n, Rng& rng) const {
  auto draw = dist::draw_mixture_noise(weights_, n, dim(), rng);
  return Noise{std::move(draw.eps), dist::one_hot(draw.component, components()), {}};
}

Noise ParametricMoGGenerator::population_noise(std::size_t points) const {
  if (dim() != 1) {
    throw ContractError("population mode needs a one-dimensional generator");
  }
  if (points < 2) throw ContractError("population mode needs >= 2 points");
  // Midpoint rule for the standard normal on [-8, 8], renormalised so the
  // weights of each component sum to exactly its mixture weight.
  const double lo = -8.0;
  const double h = 16.0 / static_cast<double>(points);
  std::vector<double> node(points);
  std::vector<double> dens(points);
  double total = 0.0;
  for (std::size_t j = 0; j < points; ++j) {
    node[j] = lo + (static_cast<double>(j) + 0.5) * h;
    dens[j] = std::exp(-0.5 * node[j] * node[j]);
    total += dens[j];
  }
  const std::size_t k = components();
  Noise out;
  out.latent = Tensor(Shape{k * points, 1});
  out.selector = Tensor(Shape{k * points, k}, 0.0);
  out.weights.resize(k * points);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < points; ++j) {
      const std::size_t r = c * points + j;
      out.latent[r] = node[j];
      out.selector.at(r, c) = 1.0;
      out.weights[r] = weights_[c] * dens[j] / total;
    }
  }
  return out;
}

Var ParametricMoGGenerator::generate(const Var& theta, const Noise& noise) const {
  if (noise.selector.cols() != components() || noise.latent.cols() != dim() ||
      noise.selector.rows() != noise.latent.rows()) {
    throw ShapeError("ParametricMoGGenerator::generate: noise does not match "
                     "a " + std::to_string(components()) + "-component, " +
                     std::to_string(dim()) + "-dimensional generator");
  }
  Var onehot = ad::constant(noise.selector);
  Var means = layout_.view(theta, 0);
  Var spread = ad::matmul(onehot, ad::constant(stds_));
  return ad::matmul(onehot, means) + spread * ad::constant(noise.latent);
}

dist::GaussianMixture ParametricMoGGenerator::as_mixture(const Tensor& theta) const {
  layout_.check(theta, "as_mixture");
  return {weights_, layout_.extract(theta, 0), stds_};
}

MlpGenerator::MlpGenerator(std::size_t latent_dim, std::vector<std::size_t> hidden,
                           std::size_t output_dim)
    : net_(chain(latent_dim, hidden, output_dim), layout_, "") {}

Tensor MlpGenerator::init_params(Rng& rng) const {
  Tensor flat(Shape{layout_.size()}, 0.0);
  net_.init(layout_, flat, rng);
  return flat;
}

Noise MlpGenerator::draw_noise(std::size_t n, Rng& rng) const {
  return Noise{ad::sample_standard_normal(rng, {n, latent_dim()}), {}, {}};
}

Var MlpGenerator::generate(const Var& theta, const Noise& noise) const {
  return net_.forward(layout_, theta, ad::constant(noise.latent));
}

// ---------------------------------------------------------------- estimators

Tensor Estimator::draw_noise(std::size_t, Rng&) const { return Tensor(); }

GaussianEstimator::GaussianEstimator(std::size_t dim, bool learn_log_std)
    : dim_(dim), learn_log_std_(learn_log_std) {
  if (dim == 0) throw ContractError("GaussianEstimator dimension must be >= 1");
  layout_.add("mean", {dim});
  if (learn_log_std) layout_.add("log_std", {dim});
}

Tensor GaussianEstimator::init_params(Rng&) const {
  return Tensor(Shape{layout_.size()}, 0.0);
}

Var GaussianEstimator::log_likelihood(const Var& phi, const Var& x,
                                      const std::vector<double>& weights,
                                      const Tensor&) const {
  require_dim(x, dim_, "GaussianEstimator::log_likelihood");
  Var mu = ad::reshape(layout_.view(phi, 0), {1, dim_});
  Var z = x - mu;
  Var quad;
  Var norm = ad::constant(-static_cast<double>(dim_) * kHalfLog2Pi);
  if (learn_log_std_) {
    Var log_std = ad::reshape(layout_.view(phi, 1), {1, dim_});
    z = z / ad::exp(log_std);
    norm = norm - ad::sum(log_std);
  }
  quad = ad::matmul(ad::square(z), ad::constant(Tensor(Shape{dim_, 1}, 1.0)));
  Var rows = ad::scale(quad, -0.5) + norm;
  return weighted_mean(rows, weights);
}

MoGEstimator::MoGEstimator(std::size_t components, std::size_t dim)
    : k_(components), dim_(dim) {
  if (components == 0 || dim == 0) {
    throw ContractError("MoGEstimator needs >= 1 component and dimension");
  }
  layout_.add("logits", {k_});
  layout_.add("means", {k_, dim_});
  layout_.add("log_stds", {k_, dim_});
}

Tensor MoGEstimator::init_params(Rng& rng) const {
  Tensor flat(Shape{layout_.size()}, 0.0);
  layout_.assign(flat, 1, ad::sample_standard_normal(rng, {k_, dim_}));
  return flat;
}

Var MoGEstimator::log_density(const Var& phi, const Var& x) const {
  require_dim(x, dim_, "MoGEstimator::log_likelihood");
  Var logits = layout_.view(phi, 0);
  dist::MixtureVars params{logits - ad::logsumexp(logits), layout_.view(phi, 1),
                           layout_.view(phi, 2)};
  return dist::mixture_log_density(params, x);
}

Var MoGEstimator::log_likelihood(const Var& phi, const Var& x,
                                 const std::vector<double>& weights,
                                 const Tensor&) const {
  return weighted_mean(log_density(phi, x), weights);
}

Tensor MoGEstimator::params_from_mixture(const dist::GaussianMixture& mog) const {
  if (mog.components() != k_ || mog.dim() != dim_) {
    throw ShapeError("params_from_mixture: mixture shape does not match");
  }
  Tensor flat(Shape{layout_.size()}, 0.0);
  Tensor logits(Shape{k_});
  Tensor log_stds(Shape{k_, dim_});
  for (std::size_t k = 0; k < k_; ++k) logits[k] = std::log(mog.weights[k]);
  for (std::size_t i = 0; i < log_stds.size(); ++i) log_stds[i] = std::log(mog.stds[i]);
  layout_.assign(flat, 0, logits);
  layout_.assign(flat, 1, mog.means);
  layout_.assign(flat, 2, log_stds);
  return flat;
}

dist::GaussianMixture MoGEstimator::to_mixture(const Tensor& phi) const {
  layout_.check(phi, "to_mixture");
  Tensor logits = layout_.extract(phi, 0);
  double mx = logits[0];
  for (double v : logits.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - mx);
  dist::GaussianMixture out;
  for (double v : logits.data()) out.weights.push_back(std::exp(v - mx) / z);
  out.means = layout_.extract(phi, 1);
  out.stds = layout_.extract(phi, 2);
  for (std::size_t i = 0; i < out.stds.size(); ++i) out.stds[i] = std::exp(out.stds[i]);
  return out;
}

VaeEstimator::VaeEstimator(std::size_t dim, std::size_t latent_dim,
                           std::vector<std::size_t> hidden, std::size_t samples)
    : dim_(dim),
      latent_(latent_dim),
      samples_(samples),
      encoder_(chain(dim, hidden, 2 * latent_dim), layout_, "enc."),
      decoder_(chain(latent_dim, hidden, 2 * dim), layout_, "dec.") {
  if (samples == 0) throw ContractError("VAE needs >= 1 ELBO sample");
}

Tensor VaeEstimator::init_params(Rng& rng) const {
  Tensor flat(Shape{layout_.size()}, 0.0);
  encoder_.init(layout_, flat, rng);
  decoder_.init(layout_, flat, rng);
  return flat;
}

Tensor VaeEstimator::draw_noise(std::size_t n, Rng& rng) const {
  return ad::sample_standard_normal(rng, {samples_ * n, latent_});
}

Var VaeEstimator::elbo_rows(const Var& phi, const Var& x, const Tensor& noise) const {
  require_dim(x, dim_, "VaeEstimator::log_likelihood");
  const std::size_t n = x.shape()[0];
  if (noise.rows() != samples_ * n || noise.cols() != latent_) {
    throw ShapeError("VaeEstimator: noise must be [" + std::to_string(samples_ * n) +
                     ", " + std::to_string(latent_) + "], got " +
                     ad::shape_string(noise.shape()));
  }
  Var xs = x;
  if (samples_ > 1) {
    std::vector<Var> copies(samples_, x);
    xs = ad::concat(copies, 0);
  }
  Var enc = encoder_.forward(layout_, phi, xs);
  Var mu_z = ad::slice(enc, 1, 0, latent_);
  Var logv_z = ad::slice(enc, 1, latent_, latent_);
  Var z = mu_z + ad::exp(ad::scale(logv_z, 0.5)) * ad::constant(noise);

  Var dec = decoder_.forward(layout_, phi, z);
  Var mu_x = ad::slice(dec, 1, 0, dim_);
  Var logv_x = ad::slice(dec, 1, dim_, dim_);

  Var ones_x = ad::constant(Tensor(Shape{dim_, 1}, 1.0));
  Var ones_z = ad::constant(Tensor(Shape{latent_, 1}, 1.0));
  // log N(x; mu_x, diag exp(logv_x)) summed over dimensions.
  Var recon_terms = ad::square(xs - mu_x) / ad::exp(logv_x) + logv_x;
  Var recon = ad::scale(ad::matmul(recon_terms, ones_x), -0.5) +
              ad::constant(-static_cast<double>(dim_) * kHalfLog2Pi);
  // KL(q(z|x) || N(0, I)).
  Var kl_terms = ad::exp(logv_z) + ad::square(mu_z) - logv_z;
  Var kl = ad::scale(ad::matmul(kl_terms, ones_z), 0.5) +
           ad::constant(-0.5 * static_cast<double>(latent_));
  return recon - kl;
}

Var VaeEstimator::log_likelihood(const Var& phi, const Var& x,
                                 const std::vector<double>& weights,
                                 const Tensor& noise) const {
  Var rows = elbo_rows(phi, x, noise);
  if (weights.empty()) return ad::mean(rows);
  std::vector<double> tiled;
  tiled.reserve(samples_ * weights.size());
  const double inv = 1.0 / static_cast<double>(samples_);
  for (std::size_t s = 0; s < samples_; ++s) {
    for (double w : weights) tiled.push_back(w * inv);
  }
  return ad::weighted_sum(rows, Tensor::vector(tiled));
}

// ---------------------------------------------------------------- discriminator

Discriminator::Discriminator(std::size_t dim, std::vector<std::size_t> hidden)
    : net_(chain(dim, hidden, 1), layout_, "") {}

Tensor Discriminator::init_params(Rng& rng) const {
  Tensor flat(Shape{layout_.size()}, 0.0);
  net_.init(layout_, flat, rng);
  return flat;
}

Var Discriminator::logits(const Var& psi, const Var& x) const {
  return net_.forward(layout_, psi, x);
}

Var Discriminator::probability(const Var& psi, const Var& x) const {
  return ad::sigmoid(logits(psi, x));
}

Var Discriminator::log_prob_real(const Var& psi, const Var& x) const {
  return log_sigmoid(logits(psi, x));
}

Var Discriminator::log_prob_fake(const Var& psi, const Var& x) const {
  return log_one_minus_sigmoid(logits(psi, x));
}

Var log_sigmoid(const Var& logits) { return -ad::softplus(-logits); }

Var log_one_minus_sigmoid(const Var& logits) { return -ad::softplus(logits); }

}  // namespace lbt::models
