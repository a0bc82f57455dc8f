#include "gpal/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace gpal::diff {

void AdamState::init(const std::vector<Tensor>& params) {
  m.clear();
  v.clear();
  t = 0;
  for (const Tensor& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
}

void adam_step(std::vector<Tensor>& params, const Gradients& grads, AdamState& state,
               double step_size, const std::vector<std::string>& names) {
  if (!state.initialized()) state.init(params);
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (state.m[pi].size() != p.numel()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for parameter " +
                                  std::to_string(pi));
    }
    const Tensor g = grads.at(p);
    const double* gd = g.data();
    double* pd = p.data();
    double* md = state.m[pi].data();
    double* vd = state.v[pi].data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      if (!std::isfinite(gd[i])) {
        const std::string label = pi < names.size() ? names[pi] : ("#" + std::to_string(pi));
        throw std::runtime_error("adam_step: non-finite gradient in parameter " + label +
                                 " at element " + std::to_string(i));
      }
      md[i] = AdamState::kBeta1 * md[i] + (1.0 - AdamState::kBeta1) * gd[i];
      vd[i] = AdamState::kBeta2 * vd[i] + (1.0 - AdamState::kBeta2) * gd[i] * gd[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      pd[i] -= step_size * mhat / (std::sqrt(vhat) + AdamState::kEps);
    }
  }
}

}  // namespace gpal::diff
