#pragma once

#include <functional>

#include "gpal/tensor.hpp"

namespace gpal::diff {

/// Outcome of one reverse-mode vs. central-difference comparison.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = false;
};

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences, coordinate by coordinate. `f` must build its
/// result from the supplied leaf with diff ops and be deterministic. Reports
/// failures instead of throwing.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double h, double tol);

}  // namespace gpal::diff
