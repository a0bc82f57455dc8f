#include "gpal/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace gpal::diff {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double h, double tol) {
  Tensor x = point.clone();
  x.set_requires_grad(true);

  Tensor analytic;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = f(x);
    analytic = tape.backward(loss).at(x);
  }

  GradCheckReport report;
  Tensor probe = point.clone();
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe).item();
    probe[i] = saved - h;
    const double down = f(probe).item();
    probe[i] = saved;

    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace gpal::diff
