#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpal/tensor.hpp"

namespace gpal::diff {

/// Per-parameter Adam moments. Moments start at zero; t increments by exactly
/// one per step. beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  void init(const std::vector<Tensor>& params);
  bool initialized() const { return !m.empty(); }
};

/// One bias-corrected Adam update, element-wise, in place. Parameters without
/// a gradient in `grads` see a zero gradient. Throws on a non-finite gradient
/// entry, naming the offending parameter.
void adam_step(std::vector<Tensor>& params, const Gradients& grads, AdamState& state,
               double step_size, const std::vector<std::string>& names = {});

}  // namespace gpal::diff
