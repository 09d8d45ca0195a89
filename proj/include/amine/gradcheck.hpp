#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace amine {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

// Loss value and analytic gradient for a flat parameter vector.
struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

using LossFn = std::function<LossAndGrad(std::span<const double>)>;

// Relative error used by the checker: |a - n| / max(|a|, |n|, floor).
// The floor keeps near-zero gradients from turning round-off into failures.
double gradient_relative_error(double analytic, double numeric,
                               double floor = 1e-6);

// Central-difference check of every coordinate of `params` (or of the
// coordinates in `subset` when non-empty). `loss_fn` must be deterministic.
// epsilon must lie in [1e-5, 1e-3].
GradCheckReport finite_diff_check(const LossFn& loss_fn,
                                  std::span<const double> params,
                                  double epsilon, double tolerance,
                                  std::span<const std::size_t> subset = {});

}  // namespace amine
