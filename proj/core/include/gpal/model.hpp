#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gpal/ops.hpp"
#include "gpal/tensor.hpp"
#include "gpal/text.hpp"

namespace gpal::model {

using diff::Tensor;
using text::TokenId;
using text::Vocabulary;

struct TransformerConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  double dropout = 0.1;  // training only
  std::size_t max_len = 32;

  void validate() const;
  std::size_t head_dim() const { return d_model / heads; }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [d, d]
};

struct FfnParams {
  Tensor w1, b1;  // [d, ffn], [ffn]
  Tensor w2, b2;  // [ffn, d], [d]
};

/// Self-attention block; with a causal mask it is also the LM block.
struct TransformerLayer {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FfnParams ffn;
};

struct DecoderLayer {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self_attn;
  AttentionParams cross_attn;
  FfnParams ffn;
};

/// Miniature pre-LN transformer encoder-decoder translation model.
struct NmtModel {
  TransformerConfig config;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;

  Tensor src_embed;  // [|Vx|, m]; row space is the projection target of the attack
  Tensor tgt_embed;  // [|Vy|, m]
  std::vector<TransformerLayer> encoder;
  std::vector<DecoderLayer> decoder;
  LayerNormParams enc_final_ln, dec_final_ln;
  Tensor out_w;  // [m, |Vy|]
  Tensor out_b;  // [|Vy|]

  static NmtModel init(const TransformerConfig& config, Vocabulary src_vocab, Vocabulary tgt_vocab,
                       std::uint64_t seed);

  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  void set_trainable(bool trainable);
};

/// Decoder-only causal LM over the source language. It owns no embedding
/// table; inputs arrive through the bridge from the (frozen) NMT source
/// table, a copy of which is kept for gathering discrete tokens.
struct CausalLm {
  TransformerConfig config;
  Vocabulary vocab;
  Tensor src_embed;  // frozen NMT source table this LM was trained against
  std::vector<TransformerLayer> layers;
  LayerNormParams final_ln;
  Tensor out_w;  // [n, |Vx|]
  Tensor out_b;  // [|Vx|]

  static CausalLm init(const TransformerConfig& config, Vocabulary vocab, Tensor frozen_src_embed,
                       std::uint64_t seed);

  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  void set_trainable(bool trainable);
};

/// Trained linear map from NMT embedding space (m) to LM space (n). No bias,
/// so projection by cosine is exactly scale invariant.
struct EmbeddingBridge {
  Tensor weight;  // [m, n]

  static EmbeddingBridge init(std::size_t m, std::size_t n, std::uint64_t seed);

  /// Rows [k, m] -> [k, n].
  Tensor apply(const Tensor& embeddings) const { return diff::matmul(embeddings, weight); }

  std::size_t input_dim() const { return weight.shape()[0]; }
  std::size_t output_dim() const { return weight.shape()[1]; }
};

/// Sinusoidal positional encoding rows [len, d] (constant, not trained).
Tensor positional_encoding(std::size_t len, std::size_t d);

/// Gathered source-embedding rows [k, m] for a token sequence.
Tensor source_embeddings(const NmtModel& model, std::span<const TokenId> src_ids);

/// Teacher-forced mean cross entropy over the reference positions, built from
/// the supplied continuous source embeddings [k, m]. Differentiable w.r.t.
/// the embeddings; dropout off.
Tensor nmt_loss(const NmtModel& model, const Tensor& src_embeddings, std::span<const TokenId> y_ref);
Tensor nmt_loss(const NmtModel& model, std::span<const TokenId> src_ids, std::span<const TokenId> y_ref);

/// Decoder logits [l, |Vy|] from continuous source embeddings under teacher
/// forcing on `y_in` (bos-prefixed target input ids).
Tensor nmt_logits(const NmtModel& model, const Tensor& src_embeddings, std::span<const TokenId> y_in,
                  std::mt19937_64* dropout_rng = nullptr);

/// Encoder memory [k, m] (final-LN output) for decoding.
Tensor encode_source(const NmtModel& model, const Tensor& src_embeddings,
                     std::mt19937_64* dropout_rng = nullptr);

/// Decoder logits for the last position only, given cached encoder memory and
/// a batch of teacher-forced prefixes [b, t] -> [b, |Vy|].
Tensor decode_step_logits(const NmtModel& model, const Tensor& memory,
                          const std::vector<std::vector<TokenId>>& prefixes);

/// Mean negative log-likelihood of `targets` under the causal LM with
/// continuous bridged inputs [k, n]; position 1 conditions on the bridged bos
/// embedding. Differentiable w.r.t. the inputs.
Tensor lm_nll(const CausalLm& lm, const EmbeddingBridge& bridge, const Tensor& lm_inputs,
              std::span<const TokenId> targets);

/// Same, gathering discrete token embeddings through the bridge.
Tensor lm_nll(const CausalLm& lm, const EmbeddingBridge& bridge, std::span<const TokenId> ids);

// Internal building blocks shared by the training loops (batched paths).
namespace detail {

struct ForwardOptions {
  std::mt19937_64* dropout_rng = nullptr;
  double dropout = 0.0;
};

Tensor dropout(const Tensor& x, const ForwardOptions& opt);
Tensor attention(const AttentionParams& p, const TransformerConfig& cfg, const Tensor& q_in,
                 const Tensor& kv_in, const Tensor& add_mask, const ForwardOptions& opt);
Tensor encoder_stack(const NmtModel& model, const Tensor& x0, const Tensor& pad_mask,
                     const ForwardOptions& opt);
Tensor decoder_stack(const NmtModel& model, const Tensor& y0, const Tensor& memory,
                     const Tensor& causal_mask, const Tensor& cross_mask, const ForwardOptions& opt);
Tensor lm_stack(const CausalLm& lm, const Tensor& x0, const Tensor& causal_mask,
                const ForwardOptions& opt);
Tensor causal_additive_mask(std::size_t len);
Tensor input_embedding(const Tensor& rows, std::size_t d, std::size_t len_axis_size);

}  // namespace detail

}  // namespace gpal::model
