#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lbt/lab/config.hpp"

namespace lbt::lab {

// Finite-difference suite over every registered objective.
struct GradcheckCase {
  std::string name;
  int order = 1;  // 1: gradient, 2: Hessian-vector product
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

std::vector<GradcheckCase> gradcheck_suite(double first_order_tolerance,
                                           double second_order_tolerance,
                                           std::uint64_t seed = 0);

// One-step unrolled sensitivity against the influence function on random
// mixture-estimator instances fitted to their own samples.
struct InfluenceInstance {
  std::size_t dim = 1;
  double inner_product = 0.0;
  double condition = 0.0;
  bool flagged = false;
};

struct InfluenceSweep {
  std::vector<InfluenceInstance> instances;
  std::size_t regenerated = 0;  // draws whose inner fit was not a strict maximum
  std::size_t positive = 0;
};

InfluenceSweep influence_sweep(std::size_t instances, double eta, std::uint64_t seed);

// Fixed-point test: generator equal to the data, estimator at its optimum,
// population mode.
struct StationarityReport {
  double hypergradient_norm = 0.0;
  double movement = 0.0;     // sum over coordinates of |theta_end - theta_start|
  double path_length = 0.0;  // summed Euclidean length of every update (reported only)
  std::size_t iterations = 0;
  bool passed = false;
};

StationarityReport stationarity_check(const ExperimentConfig& cfg);

// f_G learning curves over the unrolling depth K and estimator steps M.
struct SensitivityCurve {
  std::string axis;  // "K" or "M"
  std::size_t value = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> iterations;
  std::vector<double> f_g;
  bool failed = false;
};

struct SensitivityStudy {
  std::vector<SensitivityCurve> curves;
  std::size_t k_wins = 0;  // seeds with final f_G(K max) >= f_G(K min)
  std::size_t m_wins = 0;  // seeds where M max reaches the threshold first
  std::size_t seeds = 0;
  bool k_passed = false;
  bool m_passed = false;
  nlohmann::json per_seed = nlohmann::json::array();
};

/// Runs the K and M sweeps over `seeds` on up to `threads` workers. Only
/// the smallest and largest values enter the pass/fail comparisons; the
/// rest are recorded as curves.
SensitivityStudy sensitivity_study(const ExperimentConfig& cfg,
                                   const std::vector<std::uint64_t>& seeds, unsigned threads);

/// First recorded iteration with f_G >= threshold, or -1.
long first_reaching(const SensitivityCurve& c, double threshold);

}  // namespace lbt::lab
