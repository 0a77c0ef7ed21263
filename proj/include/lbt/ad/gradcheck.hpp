#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "lbt/ad/graph.hpp"

namespace lbt::ad {

/// Scalar function of a flat parameter node.
using ScalarFn = std::function<Var(const Var&)>;

struct FdReport {
  /// max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor);
  /// 0 when both are exactly zero, +inf when f is non-finite at a probe.
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool non_finite = false;
  Tensor analytic;
  Tensor numeric;
};

/// Compares gradient() of `f` at `point` with central differences of step
/// `eps`. `floor` keeps coordinates whose gradient is essentially zero from
/// dominating the relative error.
FdReport finite_difference_check(const ScalarFn& f, const Tensor& point,
                                 double eps = 1e-5, double floor = 1e-8);

/// Second-order variant: checks gradient(<grad f, v>) = H v against central
/// differences of <grad f, v> for the fixed direction `direction`.
FdReport hessian_vector_check(const ScalarFn& f, const Tensor& point,
                              const Tensor& direction, double eps = 1e-5,
                              double floor = 1e-8);

}  // namespace lbt::ad
