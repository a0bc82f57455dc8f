#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "gpal/tensor.hpp"

namespace gpal::diff {

// Element-wise with broadcasting on leading axes: shapes must be equal, or
// one operand's shape must be a suffix of the other's (or a one-element
// scalar). Gradients for the smaller operand sum over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& t, double c);
Tensor sqrt(const Tensor& t);

// [B..., M, K] x [B..., K, N] -> [B..., M, N]. A rank-2 right operand is
// shared across all leading axes of the left one.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& t, std::size_t axis_a, std::size_t axis_b);
Tensor reshape(const Tensor& t, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t len);

/// Rows of `table` ([V, d]) selected by ids -> [ids.size(), d].
Tensor embedding_gather(const Tensor& table, std::span<const std::int32_t> ids);

// Last-axis row operations.
Tensor softmax(const Tensor& t);
Tensor log_softmax(const Tensor& t);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor relu(const Tensor& t);
Tensor gelu(const Tensor& t);

/// Entries where mask is nonzero are replaced by `value`; no gradient flows
/// through them. The mask broadcasts like the element-wise ops, carries no
/// gradient, and is captured by value.
Tensor mask_fill(const Tensor& t, const Tensor& mask, double value);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

/// Mean token-level cross entropy from raw logits [..., V] against one target
/// id per row. Rows whose target equals `ignore_id` are excluded from the
/// mean. Numerically stable (log-sum-exp with max shift).
Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::int32_t> targets,
                                 std::optional<std::int32_t> ignore_id = std::nullopt);

}  // namespace gpal::diff
