#pragma once

#include <span>
#include <vector>

#include "gpal/model.hpp"

namespace gpal::model {

/// Length-normalized beam search (score = mean log-prob of the generated
/// tokens). beam_size 1 is greedy argmax decoding. Stops at eos or max_len;
/// per-step ties break toward the lower token id. Deterministic.
/// Returns generated ids including the terminal eos (the eos is absent only
/// when max_len was hit first).
std::vector<TokenId> translate(const NmtModel& model, std::span<const TokenId> src_ids,
                               std::size_t beam_size = 4);

/// Mean log-prob of a generated sequence under teacher forcing; the beam
/// objective used for scoring and tests.
double sequence_mean_logprob(const NmtModel& model, std::span<const TokenId> src_ids,
                             std::span<const TokenId> generated);

}  // namespace gpal::model
