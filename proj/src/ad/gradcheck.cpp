#include "lbt/ad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lbt/error.hpp"

namespace lbt::ad {
namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  // Probes go through a parameter leaf so functions that differentiate
  // internally (hessian_vector_check) still work.
  try {
    return f(parameter(x)).value().item();
  } catch (const DomainError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

FdReport finite_difference_check(const ScalarFn& f, const Tensor& point,
                                 double eps, double floor) {
  FdReport report;
  Var x = parameter(point);
  Var y = f(x);
  if (y.size() != 1) {
    throw ContractError("finite_difference_check: function is not scalar");
  }
  report.analytic = gradient(y, x, {.create_graph = false}).value();
  report.numeric = Tensor(point.shape(), 0.0);

  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = evaluate(f, probe);
    probe[i] = saved - eps;
    const double down = evaluate(f, probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.non_finite = true;
      report.max_rel_error = std::numeric_limits<double>::infinity();
      report.worst_index = i;
      report.numeric[i] = std::numeric_limits<double>::quiet_NaN();
      return report;
    }
    const double numeric = (up - down) / (2.0 * eps);
    report.numeric[i] = numeric;
    const double analytic = report.analytic[i];
    const double diff = std::abs(analytic - numeric);
    if (diff == 0.0) continue;
    const double den =
        std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = diff / den;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

FdReport hessian_vector_check(const ScalarFn& f, const Tensor& point,
                              const Tensor& direction, double eps,
                              double floor) {
  if (direction.size() != point.size()) {
    throw ShapeError("hessian_vector_check: direction has " +
                     std::to_string(direction.size()) + " entries, point " +
                     std::to_string(point.size()));
  }
  const Tensor v = direction.reshaped(point.shape());
  ScalarFn directional = [&f, &v](const Var& x) {
    Var g = gradient(f(x), x);
    return dot(g, constant(v));
  };
  return finite_difference_check(directional, point, eps, floor);
}

}  // namespace lbt::ad
