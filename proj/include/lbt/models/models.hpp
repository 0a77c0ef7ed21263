#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "lbt/ad/graph.hpp"
#include "lbt/ad/rng.hpp"
#include "lbt/dist/mixture.hpp"

namespace lbt::models {

using ad::Rng;
using ad::Shape;
using ad::Tensor;
using ad::Var;

/// Named block inside a flat parameter vector.
struct ParamBlock {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size() const { return ad::shape_size(shape); }
};

/// Ordered list of parameter blocks. Blocks are laid out contiguously in the
/// order they were added, each in row-major order. This ordering is what
/// checkpoints and Hessian indices refer to.
class ParamLayout {
 public:
  std::size_t add(std::string name, Shape shape);
  std::size_t size() const noexcept { return total_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }

  /// Differentiable view of block i of `flat` with the block's shape.
  Var view(const Var& flat, std::size_t i) const;
  /// Copy of block i of `flat`.
  Tensor extract(const Tensor& flat, std::size_t i) const;
  /// Writes `value` into block i of `flat`.
  void assign(Tensor& flat, std::size_t i, const Tensor& value) const;
  /// Throws ShapeError unless `flat` is a vector of size().
  void check(const Tensor& flat, const std::string& who) const;

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

/// Fully connected network with tanh hidden layers and a linear output.
/// Blocks: W0 [w0, w1], b0 [1, w1], W1, b1, ... appended to a caller-owned
/// layout so several networks can share one flat vector.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, ParamLayout& layout,
      const std::string& prefix);

  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  const std::vector<std::size_t>& widths() const { return widths_; }

  /// x [n, input_dim] -> [n, output_dim].
  Var forward(const ParamLayout& layout, const Var& flat, const Var& x) const;
  /// Xavier-uniform weights and zero biases, written into `flat`.
  void init(const ParamLayout& layout, Tensor& flat, Rng& rng) const;

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> weight_blocks_;
  std::vector<std::size_t> bias_blocks_;
};

/// Randomness behind one generated batch. `selector` is a one-hot component
/// choice (ParametricMoG only). `weights`, when non-empty, are per-sample
/// quadrature weights summing to one; empty means the uniform 1/n.
struct Noise {
  Tensor latent;
  Tensor selector;
  std::vector<double> weights;

  std::size_t count() const { return latent.rows(); }
};

/// Weighted mean over the rows of an [n, 1] node (uniform when weights is
/// empty).
Var weighted_mean(const Var& rows, const std::vector<double>& weights);

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string kind() const = 0;
  virtual const ParamLayout& layout() const = 0;
  std::size_t num_params() const { return layout().size(); }
  /// Dimension of generated samples.
  virtual std::size_t dim() const = 0;
  virtual Tensor init_params(Rng& rng) const = 0;
  virtual Noise draw_noise(std::size_t n, Rng& rng) const = 0;
  /// Deterministic quadrature batch for population-mode expectations.
  /// Only supported for one-dimensional ParametricMoG generators.
  virtual Noise population_noise(std::size_t points_per_component) const;
  /// x = G(noise; theta) as an [n, dim] node, differentiable in theta.
  virtual Var generate(const Var& theta, const Noise& noise) const = 0;
};

/// Mixture with learnable means (theta = means, row-major [K, D]) and fixed
/// weights and stds. Sampling is reparameterised: the component choice is a
/// constant one-hot row, so gradients reach only the chosen mean.
class ParametricMoGGenerator final : public Generator {
 public:
  ParametricMoGGenerator(std::vector<double> weights, Tensor stds);

  std::string kind() const override { return "parametric_mog"; }
  const ParamLayout& layout() const override { return layout_; }
  std::size_t dim() const override { return stds_.cols(); }
  std::size_t components() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const Tensor& stds() const { return stds_; }

  /// Means of zero; callers normally load explicit initial means.
  Tensor init_params(Rng& rng) const override;
  Noise draw_noise(std::size_t n, Rng& rng) const override;
  Noise population_noise(std::size_t points_per_component) const override;
  Var generate(const Var& theta, const Noise& noise) const override;

  dist::GaussianMixture as_mixture(const Tensor& theta) const;

 private:
  std::vector<double> weights_;
  Tensor stds_;
  ParamLayout layout_;
};

/// Two-hidden-layer style MLP generator with standard normal latent.
class MlpGenerator final : public Generator {
 public:
  MlpGenerator(std::size_t latent_dim, std::vector<std::size_t> hidden,
               std::size_t output_dim);

  std::string kind() const override { return "mlp"; }
  const ParamLayout& layout() const override { return layout_; }
  std::size_t dim() const override { return net_.output_dim(); }
  std::size_t latent_dim() const { return net_.input_dim(); }
  const Mlp& net() const { return net_; }

  Tensor init_params(Rng& rng) const override;
  Noise draw_noise(std::size_t n, Rng& rng) const override;
  Var generate(const Var& theta, const Noise& noise) const override;

 private:
  ParamLayout layout_;
  Mlp net_;
};

class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string kind() const = 0;
  virtual const ParamLayout& layout() const = 0;
  std::size_t num_params() const { return layout().size(); }
  virtual std::size_t dim() const = 0;
  virtual Tensor init_params(Rng& rng) const = 0;
  /// Per-evaluation randomness (the VAE's reparameterisation draws for a
  /// batch of n points). Empty for exact-density estimators.
  virtual Tensor draw_noise(std::size_t n, Rng& rng) const;
  /// Weighted mean log-likelihood (ELBO for the VAE) of the rows of x.
  /// Differentiable in both phi and x.
  virtual Var log_likelihood(const Var& phi, const Var& x,
                             const std::vector<double>& weights,
                             const Tensor& noise) const = 0;
  /// True when log_likelihood is an exact log density.
  virtual bool exact() const { return true; }
};

/// N(mu, diag sigma^2); phi = [mu (D) | log sigma (D) when learnable].
class GaussianEstimator final : public Estimator {
 public:
  GaussianEstimator(std::size_t dim, bool learn_log_std);

  std::string kind() const override { return "gaussian"; }
  const ParamLayout& layout() const override { return layout_; }
  std::size_t dim() const override { return dim_; }
  bool learns_log_std() const { return learn_log_std_; }
  /// Zero mean, unit std.
  Tensor init_params(Rng& rng) const override;
  Var log_likelihood(const Var& phi, const Var& x,
                     const std::vector<double>& weights,
                     const Tensor& noise) const override;

 private:
  std::size_t dim_;
  bool learn_log_std_;
  ParamLayout layout_;
};

/// Mixture estimator; phi = [logits (K) | means (K*D) | log stds (K*D)].
/// Weights are softmax(logits); stds are exp(log stds).
class MoGEstimator final : public Estimator {
 public:
  MoGEstimator(std::size_t components, std::size_t dim);

  std::string kind() const override { return "mog"; }
  const ParamLayout& layout() const override { return layout_; }
  std::size_t dim() const override { return dim_; }
  std::size_t components() const { return k_; }
  /// Zero logits, means drawn from N(0, 1), unit stds.
  Tensor init_params(Rng& rng) const override;
  Var log_likelihood(const Var& phi, const Var& x,
                     const std::vector<double>& weights,
                     const Tensor& noise) const override;
  /// Per-row log density, [n, 1].
  Var log_density(const Var& phi, const Var& x) const;

  Tensor params_from_mixture(const dist::GaussianMixture& mog) const;
  dist::GaussianMixture to_mixture(const Tensor& phi) const;

 private:
  std::size_t k_;
  std::size_t dim_;
  ParamLayout layout_;
};

/// Variational autoencoder scored by a reparameterised ELBO.
/// Encoder: x -> [mu_z | log var_z]; decoder: z -> [mu_x | log var_x].
/// The noise tensor holds `samples` standard normal draws per row, shaped
/// [samples * n, latent]; sample s of row i sits at row s * n + i.
class VaeEstimator final : public Estimator {
 public:
  VaeEstimator(std::size_t dim, std::size_t latent_dim,
               std::vector<std::size_t> hidden, std::size_t samples = 1);

  std::string kind() const override { return "vae"; }
  const ParamLayout& layout() const override { return layout_; }
  std::size_t dim() const override { return dim_; }
  std::size_t latent_dim() const { return latent_; }
  std::size_t samples() const { return samples_; }
  Tensor init_params(Rng& rng) const override;
  Tensor draw_noise(std::size_t n, Rng& rng) const override;
  Var log_likelihood(const Var& phi, const Var& x,
                     const std::vector<double>& weights,
                     const Tensor& noise) const override;
  bool exact() const override { return false; }

  /// Per-row ELBO, [samples * n, 1].
  Var elbo_rows(const Var& phi, const Var& x, const Tensor& noise) const;

 private:
  std::size_t dim_;
  std::size_t latent_;
  std::size_t samples_;
  ParamLayout layout_;
  Mlp encoder_;
  Mlp decoder_;
};

/// MLP producing one logit per row; D(x) = sigmoid(logit).
class Discriminator {
 public:
  Discriminator(std::size_t dim, std::vector<std::size_t> hidden);

  const ParamLayout& layout() const { return layout_; }
  std::size_t num_params() const { return layout_.size(); }
  std::size_t dim() const { return net_.input_dim(); }
  Tensor init_params(Rng& rng) const;

  /// [n, 1] logits.
  Var logits(const Var& psi, const Var& x) const;
  /// Probabilities D(x) in (0, 1).
  Var probability(const Var& psi, const Var& x) const;
  /// log D(x) = -softplus(-logit).
  Var log_prob_real(const Var& psi, const Var& x) const;
  /// log(1 - D(x)) = -softplus(logit).
  Var log_prob_fake(const Var& psi, const Var& x) const;

 private:
  ParamLayout layout_;
  Mlp net_;
};

/// Stable log(sigmoid(l)) and log(1 - sigmoid(l)) for an [n, 1] logit node.
Var log_sigmoid(const Var& logits);
Var log_one_minus_sigmoid(const Var& logits);

}  // namespace lbt::models
