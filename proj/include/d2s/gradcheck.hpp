#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace d2s {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool has_nan = false;

  bool ok(double tolerance) const { return !has_nan && max_rel_err < tolerance; }
};

// Central-difference check of an analytic gradient. `loss` is re-evaluated at
// params +/- step per coordinate; relative error uses the larger of the two
// magnitudes with a 1e-12 floor. A NaN on either side is reported as a
// failure at that parameter index.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss, std::span<const double> analytic_grad,
                           std::vector<double> params, double step) {
  if (analytic_grad.size() != params.size()) {
    throw std::invalid_argument("gradient length " + std::to_string(analytic_grad.size()) +
                                " does not match parameter length " +
                                std::to_string(params.size()));
  }
  if (!(step > 0.0)) throw std::invalid_argument("step must be positive");

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss(std::span<const double>(params));
    params[i] = saved - step;
    const double down = loss(std::span<const double>(params));
    params[i] = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double analytic = analytic_grad[i];
    if (std::isnan(numeric) || std::isnan(analytic)) {
      report.has_nan = true;
      report.max_rel_err = std::numeric_limits<double>::infinity();
      report.worst_index = i;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
      return report;
    }
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace d2s
