#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lbt/ad/graph.hpp"
#include "lbt/models/models.hpp"

namespace lbt::bilevel {

using ad::Tensor;
using ad::Var;
using models::Estimator;
using models::Generator;
using models::Noise;

enum class InnerOptimizer { kGradientAscent, kAdamUnrolled };

std::string to_string(InnerOptimizer kind);
InnerOptimizer inner_optimizer_from_string(const std::string& name);

struct UnrollConfig {
  std::size_t steps = 5;  // K
  double eta = 1e-3;      // inner learning rate
  InnerOptimizer optimizer = InnerOptimizer::kGradientAscent;
  /// Expectations over quadrature batches instead of samples (1D toys).
  bool population = false;
  std::size_t population_points = 400;
  // Moment constants for the unrolled Adam variant.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Throws ContractError naming the violated invariant.
  void validate() const;
};

/// A batch of points together with everything needed to score it:
/// optional quadrature weights and the estimator's own noise (VAE draws).
struct Batch {
  Var x;
  std::vector<double> weights;
  Tensor estimator_noise;
};

/// phi + eta * d f_E / d phi at (phi, batch), kept differentiable in phi and
/// in batch.x. `step` is reported if the gradient is not finite.
Var inner_step(const Estimator& est, const Var& phi, const Batch& batch,
               double eta, long step = 0);

/// K inner steps from phi0 on one frozen batch.
Var unroll(const Estimator& est, const Var& phi0, const Batch& batch,
           const UnrollConfig& cfg);

/// Everything the surrogate objective needs besides theta.
struct SurrogateInputs {
  Tensor phi0;
  Noise generator_noise;
  Tensor estimator_noise_generated;  // for the generated batch
  Tensor data;                       // [m, D]
  std::vector<double> data_weights;  // empty => uniform
  Tensor estimator_noise_data;       // for the data batch
};

/// f_G(phi^K(theta)) as a graph node in theta.
Var surrogate_objective(const Generator& gen, const Estimator& est,
                        const Var& theta, const SurrogateInputs& in,
                        const UnrollConfig& cfg);

struct Hypergradient {
  Tensor gradient;      // shaped like theta
  double objective = 0; // f_G(phi^K(theta))
};

/// Exact gradient of the surrogate objective via second-order
/// differentiation through the unrolled steps. NumericError on non-finite.
Hypergradient hypergradient(const Generator& gen, const Estimator& est,
                            const Tensor& theta, const SurrogateInputs& in,
                            const UnrollConfig& cfg);

/// Jacobian of phi^K with respect to the batch points, [|phi|, n * D],
/// column j * D + d for coordinate d of point j.
Tensor unrolled_sensitivity(const Estimator& est, const Tensor& phi0,
                            const Tensor& x, const std::vector<double>& weights,
                            const Tensor& estimator_noise,
                            const UnrollConfig& cfg);

/// d f_E / d phi at phi.
Tensor estimator_gradient(const Estimator& est, const Tensor& phi,
                          const Tensor& x, const std::vector<double>& weights,
                          const Tensor& estimator_noise);

struct InfluenceResult {
  Tensor sensitivity;        // [|phi|, n * D]
  Tensor mixed;              // d(df_E/dphi)/dx, [|phi|, n * D]
  Tensor hessian;            // [|phi|, |phi|]
  double condition = 0.0;    // |lambda|_max / |lambda|_min
  bool ridge_applied = false;
  bool flagged = false;      // condition above 1e12
};

struct InfluenceOptions {
  double gradient_tolerance = 1e-6;
  double ridge = 1e-8;
  double condition_limit = 1e12;
  std::size_t max_params = 200;
};

/// dphi*/dx = -H^{-1} d(df_E/dphi)/dx at an inner optimum phi_star.
/// ContractError when the gradient norm exceeds the tolerance or the
/// estimator is too large for a dense Hessian.
InfluenceResult influence_sensitivity(const Estimator& est, const Tensor& phi_star,
                                      const Tensor& x,
                                      const std::vector<double>& weights,
                                      const Tensor& estimator_noise,
                                      const InfluenceOptions& opts = {});

struct SensitivityReport {
  Tensor unrolled;
  Tensor influence;
  double inner_product = 0.0;
  double condition = 0.0;
  bool flagged = false;
};

/// One-step unrolled sensitivity against the influence-function sensitivity.
/// Positivity of the inner product is reported, not enforced.
SensitivityReport alignment_check(const Estimator& est, const Tensor& phi_star,
                                  const Tensor& x,
                                  const std::vector<double>& weights,
                                  const Tensor& estimator_noise, double eta,
                                  const InfluenceOptions& opts = {});

struct InnerFit {
  Tensor phi;
  double gradient_norm = 0.0;
  bool converged = false;
  /// Negative definite apart from numerically null (symmetry) directions.
  bool negative_definite = false;
};

/// Drives phi to a local maximum of f_E on a fixed batch: Adam steps, then
/// Newton steps on the dense Hessian until the gradient norm is below tol.
InnerFit fit_inner_optimum(const Estimator& est, const Tensor& phi0,
                           const Tensor& x, const std::vector<double>& weights,
                           const Tensor& estimator_noise, double tol = 1e-9,
                           std::size_t adam_steps = 3000);

}  // namespace lbt::bilevel
