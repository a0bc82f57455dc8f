#include "gpal/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpal::model {

using namespace gpal::diff;

namespace {

struct Hypothesis {
  std::vector<TokenId> prefix;  // decoder input, starts with bos
  double sum_logp = 0.0;
  double mean() const { return sum_logp / static_cast<double>(prefix.size() - 1); }
};

struct Candidate {
  double score;
  TokenId token;
  std::size_t hyp;
};

}  // namespace

std::vector<TokenId> translate(const NmtModel& model, std::span<const TokenId> src_ids,
                               std::size_t beam_size) {
  if (beam_size < 1) throw std::invalid_argument("translate: beam_size must be >= 1");
  if (src_ids.empty()) throw std::invalid_argument("translate: empty source");

  Tape::Suspend no_grad;
  Tensor memory = encode_source(model, source_embeddings(model, src_ids));

  std::vector<Hypothesis> live = {{{Vocabulary::kBos}, 0.0}};
  std::vector<Hypothesis> finished;
  const std::size_t v = model.tgt_vocab.size();
  const std::size_t max_steps = model.config.max_len - 1;

  for (std::size_t step = 0; step < max_steps && !live.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& h : live) prefixes.push_back(h.prefix);
    Tensor logits = decode_step_logits(model, memory, prefixes);  // [b, V]
    Tensor logp = log_softmax(logits);

    std::vector<Candidate> cands;
    cands.reserve(live.size() * v);
    for (std::size_t i = 0; i < live.size(); ++i) {
      const double* row = logp.data() + i * v;
      for (std::size_t tok = 0; tok < v; ++tok) {
        cands.push_back({live[i].sum_logp + row[tok], static_cast<TokenId>(tok), i});
      }
    }
    const std::size_t keep = std::min(beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.hyp < b.hyp;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      Hypothesis h = live[cands[c].hyp];
      h.prefix.push_back(cands[c].token);
      h.sum_logp = cands[c].score;
      if (cands[c].token == Vocabulary::kEos) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (finished.size() >= beam_size) break;
  }

  const Hypothesis* best = nullptr;
  for (const auto& h : finished) {
    if (!best || h.mean() > best->mean() ||
        (h.mean() == best->mean() && h.prefix < best->prefix)) {
      best = &h;
    }
  }
  if (!best) {
    for (const auto& h : live) {
      if (!best || h.mean() > best->mean() ||
          (h.mean() == best->mean() && h.prefix < best->prefix)) {
        best = &h;
      }
    }
  }
  if (!best) return {Vocabulary::kEos};  // max_len == 1 degenerate case

  return std::vector<TokenId>(best->prefix.begin() + 1, best->prefix.end());
}

double sequence_mean_logprob(const NmtModel& model, std::span<const TokenId> src_ids,
                             std::span<const TokenId> generated) {
  if (generated.empty()) throw std::invalid_argument("sequence_mean_logprob: empty sequence");
  Tape::Suspend no_grad;
  std::vector<TokenId> y_in;
  y_in.push_back(Vocabulary::kBos);
  y_in.insert(y_in.end(), generated.begin(), generated.end() - 1);
  Tensor logits = nmt_logits(model, source_embeddings(model, src_ids), y_in);
  Tensor logp = log_softmax(logits);
  const std::size_t v = model.tgt_vocab.size();
  double total = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    total += logp[i * v + static_cast<std::size_t>(generated[i])];
  }
  return total / static_cast<double>(generated.size());
}

}  // namespace gpal::model
