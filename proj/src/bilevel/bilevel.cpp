#include "lbt/bilevel/bilevel.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "lbt/error.hpp"

namespace lbt::bilevel {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Keeps the derivative of sqrt finite when the second moment is exactly 0.
constexpr double kSqrtGuard = 1e-16;

Tensor from_matrix(const RowMatrix& m) {
  Tensor out(ad::Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMatrix>(out.data().data(), m.rows(), m.cols()) = m;
  return out;
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

// A constant starting point still needs to be a differentiation target.
Var as_target(const Var& phi) {
  return phi.requires_grad() ? phi : ad::parameter(phi.value());
}

void require_finite(const Var& v, const std::string& what, long step) {
  if (!v.value().all_finite()) throw NumericError(what + " is not finite", step);
}

struct Derivatives {
  RowMatrix hessian;  // [P, P]
  RowMatrix mixed;    // [P, n * D]
  Tensor gradient;
};

Derivatives second_order(const Estimator& est, const Tensor& phi, const Tensor& x,
                         const std::vector<double>& weights, const Tensor& noise,
                         bool with_mixed) {
  const std::size_t p = phi.size();
  Var ph = ad::parameter(phi);
  Var xs = ad::parameter(x);
  Var g = ad::gradient(est.log_likelihood(ph, xs, weights, noise), ph);
  Derivatives d;
  d.gradient = g.value();
  d.hessian.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  if (with_mixed) d.mixed.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(x.size()));
  std::vector<Var> wrt{ph};
  if (with_mixed) wrt.push_back(xs);
  for (std::size_t i = 0; i < p; ++i) {
    auto rows = ad::gradient(ad::sum(ad::slice(g, 0, i, 1)), wrt, {.create_graph = false});
    const auto h = rows[0].value().data();
    for (std::size_t j = 0; j < p; ++j) d.hessian(i, j) = h[j];
    if (with_mixed) {
      const auto b = rows[1].value().data();
      for (std::size_t j = 0; j < x.size(); ++j) d.mixed(i, j) = b[j];
    }
  }
  d.hessian = 0.5 * (d.hessian + d.hessian.transpose()).eval();
  return d;
}

}  // namespace

std::string to_string(InnerOptimizer kind) {
  return kind == InnerOptimizer::kGradientAscent ? "gradient_ascent" : "adam_unrolled";
}

InnerOptimizer inner_optimizer_from_string(const std::string& name) {
  if (name == "gradient_ascent") return InnerOptimizer::kGradientAscent;
  if (name == "adam_unrolled") return InnerOptimizer::kAdamUnrolled;
  throw ContractError("unknown inner optimizer '" + name +
                      "' (expected gradient_ascent or adam_unrolled)");
}

void UnrollConfig::validate() const {
  if (steps < 1) throw ContractError("unroll.steps (K) must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw ContractError("unroll.eta must be positive and finite");
  }
  if (population && population_points < 2) {
    throw ContractError("unroll.population_points must be >= 2");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ContractError("unroll Adam constants out of range");
  }
}

Var inner_step(const Estimator& est, const Var& phi_in, const Batch& batch,
               double eta, long step) {
  Var phi = as_target(phi_in);
  Var g = ad::gradient(est.log_likelihood(phi, batch.x, batch.weights, batch.estimator_noise), phi);
  require_finite(g, "estimator gradient", step);
  return phi + ad::scale(g, eta);
}

Var unroll(const Estimator& est, const Var& phi0, const Batch& batch,
           const UnrollConfig& cfg) {
  cfg.validate();
  Var phi = as_target(phi0);
  if (cfg.optimizer == InnerOptimizer::kGradientAscent) {
    for (std::size_t k = 0; k < cfg.steps; ++k) {
      phi = inner_step(est, phi, batch, cfg.eta, static_cast<long>(k));
      require_finite(phi, "unrolled parameters", static_cast<long>(k));
    }
    return phi;
  }
  Var m = ad::constant(Tensor(phi0.shape(), 0.0));
  Var v = ad::constant(Tensor(phi0.shape(), 0.0));
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    Var g = ad::gradient(
        est.log_likelihood(phi, batch.x, batch.weights, batch.estimator_noise), phi);
    require_finite(g, "estimator gradient", static_cast<long>(k));
    m = ad::scale(m, cfg.beta1) + ad::scale(g, 1.0 - cfg.beta1);
    v = ad::scale(v, cfg.beta2) + ad::scale(ad::square(g), 1.0 - cfg.beta2);
    const double t = static_cast<double>(k + 1);
    Var m_hat = ad::scale(m, 1.0 / (1.0 - std::pow(cfg.beta1, t)));
    Var v_hat = ad::scale(v, 1.0 / (1.0 - std::pow(cfg.beta2, t)));
    Var denom = ad::add_scalar(ad::sqrt(ad::add_scalar(v_hat, kSqrtGuard)), cfg.adam_eps);
    phi = phi + ad::scale(m_hat / denom, cfg.eta);
    require_finite(phi, "unrolled parameters", static_cast<long>(k));
  }
  return phi;
}

Var surrogate_objective(const Generator& gen, const Estimator& est,
                        const Var& theta, const SurrogateInputs& in,
                        const UnrollConfig& cfg) {
  Batch generated{gen.generate(theta, in.generator_noise), in.generator_noise.weights,
                  in.estimator_noise_generated};
  Var phi_k = unroll(est, ad::constant(in.phi0), generated, cfg);
  return est.log_likelihood(phi_k, ad::constant(in.data), in.data_weights,
                            in.estimator_noise_data);
}

Hypergradient hypergradient(const Generator& gen, const Estimator& est,
                            const Tensor& theta, const SurrogateInputs& in,
                            const UnrollConfig& cfg) {
  Var th = ad::parameter(theta);
  Var obj = surrogate_objective(gen, est, th, in, cfg);
  require_finite(obj, "surrogate objective", static_cast<long>(cfg.steps));
  Var g = ad::gradient(obj, th, {.create_graph = false});
  require_finite(g, "hypergradient", static_cast<long>(cfg.steps));
  return {g.value(), obj.value().item()};
}

Tensor unrolled_sensitivity(const Estimator& est, const Tensor& phi0,
                            const Tensor& x, const std::vector<double>& weights,
                            const Tensor& estimator_noise,
                            const UnrollConfig& cfg) {
  Var xs = ad::parameter(x);
  Var phi_k = unroll(est, ad::constant(phi0), Batch{xs, weights, estimator_noise}, cfg);
  const std::size_t p = phi0.size();
  Tensor out(ad::Shape{p, x.size()});
  for (std::size_t i = 0; i < p; ++i) {
    Tensor row = ad::gradient(ad::sum(ad::slice(phi_k, 0, i, 1)), xs,
                              {.create_graph = false}).value();
    for (std::size_t j = 0; j < x.size(); ++j) out.at(i, j) = row[j];
  }
  return out;
}

Tensor estimator_gradient(const Estimator& est, const Tensor& phi,
                          const Tensor& x, const std::vector<double>& weights,
                          const Tensor& estimator_noise) {
  Var ph = ad::parameter(phi);
  return ad::gradient(est.log_likelihood(ph, ad::constant(x), weights, estimator_noise), ph,
                      {.create_graph = false}).value();
}

InfluenceResult influence_sensitivity(const Estimator& est, const Tensor& phi_star,
                                      const Tensor& x,
                                      const std::vector<double>& weights,
                                      const Tensor& estimator_noise,
                                      const InfluenceOptions& opts) {
  const std::size_t p = phi_star.size();
  if (p > opts.max_params) {
    throw ContractError("influence_sensitivity: " + std::to_string(p) +
                        " estimator parameters exceed the dense-Hessian limit of " +
                        std::to_string(opts.max_params));
  }
  Derivatives d = second_order(est, phi_star, x, weights, estimator_noise, true);
  const double gnorm = norm(d.gradient);
  if (!(gnorm < opts.gradient_tolerance)) {
    throw ContractError("influence_sensitivity: phi is not an inner optimum (gradient norm " +
                        std::to_string(gnorm) + ")");
  }

  InfluenceResult r;
  Eigen::SelfAdjointEigenSolver<RowMatrix> eig(d.hessian, Eigen::EigenvaluesOnly);
  const auto abs_eig = eig.eigenvalues().cwiseAbs();
  const double lo = abs_eig.minCoeff();
  r.condition = lo > 0.0 ? abs_eig.maxCoeff() / lo : std::numeric_limits<double>::infinity();
  r.flagged = !(r.condition <= opts.condition_limit);

  RowMatrix h = d.hessian;
  if (r.flagged) {
    // The Hessian at a maximum is negative semi-definite, so damping moves
    // it away from singular in the negative direction.
    h -= opts.ridge * RowMatrix::Identity(h.rows(), h.cols());
    r.ridge_applied = true;
  }
  RowMatrix s = -h.colPivHouseholderQr().solve(d.mixed);
  r.sensitivity = from_matrix(s);
  r.mixed = from_matrix(d.mixed);
  r.hessian = from_matrix(d.hessian);
  return r;
}

SensitivityReport alignment_check(const Estimator& est, const Tensor& phi_star,
                                  const Tensor& x,
                                  const std::vector<double>& weights,
                                  const Tensor& estimator_noise, double eta,
                                  const InfluenceOptions& opts) {
  InfluenceResult inf = influence_sensitivity(est, phi_star, x, weights, estimator_noise, opts);
  UnrollConfig one;
  one.steps = 1;
  one.eta = eta;
  SensitivityReport rep;
  rep.unrolled = unrolled_sensitivity(est, phi_star, x, weights, estimator_noise, one);
  rep.influence = inf.sensitivity;
  for (std::size_t i = 0; i < rep.unrolled.size(); ++i) {
    rep.inner_product += rep.unrolled[i] * rep.influence[i];
  }
  rep.condition = inf.condition;
  rep.flagged = inf.flagged;
  return rep;
}

InnerFit fit_inner_optimum(const Estimator& est, const Tensor& phi0,
                           const Tensor& x, const std::vector<double>& weights,
                           const Tensor& estimator_noise, double tol,
                           std::size_t adam_steps) {
  auto objective = [&](const Tensor& phi) {
    ad::NoGradGuard guard;
    return est.log_likelihood(ad::constant(phi), ad::constant(x), weights, estimator_noise)
        .value()
        .item();
  };

  Tensor phi = phi0;
  Tensor m(phi.shape(), 0.0);
  Tensor v(phi.shape(), 0.0);
  for (std::size_t t = 1; t <= adam_steps; ++t) {
    Tensor g = estimator_gradient(est, phi, x, weights, estimator_noise);
    if (norm(g) < tol) break;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, static_cast<double>(t)));
      const double vh = v[i] / (1.0 - std::pow(0.999, static_cast<double>(t)));
      phi[i] += 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    }
  }

  InnerFit fit;
  for (int it = 0; it < 100; ++it) {
    Derivatives d = second_order(est, phi, x, weights, estimator_noise, false);
    fit.gradient_norm = norm(d.gradient);
    // Directions with a numerically zero eigenvalue (for instance a common
    // shift of all mixture logits) are symmetries of f_E and are skipped.
    Eigen::SelfAdjointEigenSolver<RowMatrix> eig(d.hessian);
    const auto& lam = eig.eigenvalues();
    const double scale = lam.cwiseAbs().maxCoeff();
    fit.negative_definite = true;
    for (Eigen::Index k = 0; k < lam.size(); ++k) {
      if (lam(k) > 1e-10 * scale) fit.negative_definite = false;
    }
    if (fit.gradient_norm < tol) break;
    Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(d.gradient.data().data(),
                                                          static_cast<Eigen::Index>(phi.size()));
    Eigen::VectorXd dir;
    if (fit.negative_definite) {
      Eigen::VectorXd proj = eig.eigenvectors().transpose() * g;
      for (Eigen::Index k = 0; k < lam.size(); ++k) {
        proj(k) = std::abs(lam(k)) > 1e-10 * scale ? -proj(k) / lam(k) : 0.0;
      }
      dir = eig.eigenvectors() * proj;
    } else {
      dir = 1e-2 * g;
    }
    const double f0 = objective(phi);
    double step = 1.0;
    Tensor trial = phi;
    for (int back = 0; back < 40; ++back) {
      for (std::size_t i = 0; i < phi.size(); ++i) trial[i] = phi[i] + step * dir(i);
      const double f1 = objective(trial);
      if (std::isfinite(f1) && f1 >= f0 - 1e-12 * std::abs(f0)) break;
      step *= 0.5;
    }
    phi = trial;
  }
  fit.phi = phi;
  fit.converged = fit.gradient_norm < tol;
  return fit;
}

}  // namespace lbt::bilevel
