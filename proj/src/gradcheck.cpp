#include "amine/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace amine {

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport finite_diff_check(const LossFn& loss_fn,
                                  std::span<const double> params,
                                  double epsilon, double tolerance,
                                  std::span<const std::size_t> subset) {
  if (epsilon < 1e-5 || epsilon > 1e-3) {
    throw std::invalid_argument("finite_diff_check: epsilon " +
                                std::to_string(epsilon) +
                                " outside [1e-5, 1e-3]");
  }
  const LossAndGrad base = loss_fn(params);
  if (base.grad.size() != params.size()) {
    throw std::invalid_argument("finite_diff_check: gradient has " +
                                std::to_string(base.grad.size()) +
                                " entries for " +
                                std::to_string(params.size()) + " parameters");
  }

  std::vector<double> probe(params.begin(), params.end());
  GradCheckReport report;
  auto check_one = [&](std::size_t i) {
    const double saved = probe[i];
    probe[i] = saved + epsilon;
    const double up = loss_fn(probe).loss;
    probe[i] = saved - epsilon;
    const double down = loss_fn(probe).loss;
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = gradient_relative_error(base.grad[i], numeric);
    ++report.checked;
    if (err > report.max_relative_error || report.checked == 1) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.analytic_at_worst = base.grad[i];
      report.numeric_at_worst = numeric;
    }
  };

  if (subset.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : subset) {
      if (i >= params.size()) {
        throw std::out_of_range("finite_diff_check: coordinate " +
                                std::to_string(i) + " out of range");
      }
      check_one(i);
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace amine
