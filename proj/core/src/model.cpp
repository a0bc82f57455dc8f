#include "gpal/model.hpp"

#include <cmath>
#include <stdexcept>

namespace gpal::model {

using namespace gpal::diff;

void TransformerConfig::validate() const {
  if (d_model == 0 || layers == 0 || heads == 0 || ffn == 0 || max_len == 0) {
    throw std::invalid_argument("transformer config: dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw std::invalid_argument("transformer config: d_model must be divisible by heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("transformer config: dropout must be in [0, 1)");
  }
}

namespace {

Tensor glorot(Shape shape, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = static_cast<double>(shape[shape.size() - 1]);
  const double stddev = std::sqrt(2.0 / (fan_in + fan_out));
  return Tensor::randn(std::move(shape), rng, stddev);
}

LayerNormParams init_ln(std::size_t d) { return {Tensor::full({d}, 1.0), Tensor::zeros({d})}; }

AttentionParams init_attn(std::size_t d, std::mt19937_64& rng) {
  return {glorot({d, d}, rng), glorot({d, d}, rng), glorot({d, d}, rng), glorot({d, d}, rng)};
}

FfnParams init_ffn(std::size_t d, std::size_t f, std::mt19937_64& rng) {
  return {glorot({d, f}, rng), Tensor::zeros({f}), glorot({f, d}, rng), Tensor::zeros({d})};
}

TransformerLayer init_layer(const TransformerConfig& cfg, std::mt19937_64& rng) {
  return {init_ln(cfg.d_model), init_ln(cfg.d_model), init_attn(cfg.d_model, rng),
          init_ffn(cfg.d_model, cfg.ffn, rng)};
}

DecoderLayer init_decoder_layer(const TransformerConfig& cfg, std::mt19937_64& rng) {
  return {init_ln(cfg.d_model), init_ln(cfg.d_model), init_ln(cfg.d_model),
          init_attn(cfg.d_model, rng), init_attn(cfg.d_model, rng),
          init_ffn(cfg.d_model, cfg.ffn, rng)};
}

void collect_ln(const std::string& prefix, const LayerNormParams& p, std::vector<Tensor>& ts,
                std::vector<std::string>& names) {
  ts.push_back(p.gain);
  names.push_back(prefix + ".gain");
  ts.push_back(p.bias);
  names.push_back(prefix + ".bias");
}

void collect_attn(const std::string& prefix, const AttentionParams& p, std::vector<Tensor>& ts,
                  std::vector<std::string>& names) {
  ts.push_back(p.wq);
  names.push_back(prefix + ".wq");
  ts.push_back(p.wk);
  names.push_back(prefix + ".wk");
  ts.push_back(p.wv);
  names.push_back(prefix + ".wv");
  ts.push_back(p.wo);
  names.push_back(prefix + ".wo");
}

void collect_ffn(const std::string& prefix, const FfnParams& p, std::vector<Tensor>& ts,
                 std::vector<std::string>& names) {
  ts.push_back(p.w1);
  names.push_back(prefix + ".w1");
  ts.push_back(p.b1);
  names.push_back(prefix + ".b1");
  ts.push_back(p.w2);
  names.push_back(prefix + ".w2");
  ts.push_back(p.b2);
  names.push_back(prefix + ".b2");
}

void collect_layer(const std::string& prefix, const TransformerLayer& l, std::vector<Tensor>& ts,
                   std::vector<std::string>& names) {
  collect_ln(prefix + ".ln1", l.ln1, ts, names);
  collect_ln(prefix + ".ln2", l.ln2, ts, names);
  collect_attn(prefix + ".attn", l.attn, ts, names);
  collect_ffn(prefix + ".ffn", l.ffn, ts, names);
}

void collect_decoder_layer(const std::string& prefix, const DecoderLayer& l, std::vector<Tensor>& ts,
                           std::vector<std::string>& names) {
  collect_ln(prefix + ".ln1", l.ln1, ts, names);
  collect_ln(prefix + ".ln2", l.ln2, ts, names);
  collect_ln(prefix + ".ln3", l.ln3, ts, names);
  collect_attn(prefix + ".self", l.self_attn, ts, names);
  collect_attn(prefix + ".cross", l.cross_attn, ts, names);
  collect_ffn(prefix + ".ffn", l.ffn, ts, names);
}

void nmt_collect(const NmtModel& m, std::vector<Tensor>& ts, std::vector<std::string>& names) {
  ts.push_back(m.src_embed);
  names.push_back("src_embed");
  ts.push_back(m.tgt_embed);
  names.push_back("tgt_embed");
  for (std::size_t i = 0; i < m.encoder.size(); ++i) {
    collect_layer("enc." + std::to_string(i), m.encoder[i], ts, names);
  }
  for (std::size_t i = 0; i < m.decoder.size(); ++i) {
    collect_decoder_layer("dec." + std::to_string(i), m.decoder[i], ts, names);
  }
  collect_ln("enc_final_ln", m.enc_final_ln, ts, names);
  collect_ln("dec_final_ln", m.dec_final_ln, ts, names);
  ts.push_back(m.out_w);
  names.push_back("out.w");
  ts.push_back(m.out_b);
  names.push_back("out.b");
}

void lm_collect(const CausalLm& lm, std::vector<Tensor>& ts, std::vector<std::string>& names) {
  for (std::size_t i = 0; i < lm.layers.size(); ++i) {
    collect_layer("lm." + std::to_string(i), lm.layers[i], ts, names);
  }
  collect_ln("lm_final_ln", lm.final_ln, ts, names);
  ts.push_back(lm.out_w);
  names.push_back("lm_out.w");
  ts.push_back(lm.out_b);
  names.push_back("lm_out.b");
}

}  // namespace

NmtModel NmtModel::init(const TransformerConfig& config, Vocabulary src_vocab, Vocabulary tgt_vocab,
                        std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  NmtModel m;
  m.config = config;
  m.src_vocab = std::move(src_vocab);
  m.tgt_vocab = std::move(tgt_vocab);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  m.src_embed = Tensor::randn({m.src_vocab.size(), config.d_model}, rng, emb_std);
  m.tgt_embed = Tensor::randn({m.tgt_vocab.size(), config.d_model}, rng, emb_std);
  for (std::size_t i = 0; i < config.layers; ++i) m.encoder.push_back(init_layer(config, rng));
  for (std::size_t i = 0; i < config.layers; ++i) m.decoder.push_back(init_decoder_layer(config, rng));
  m.enc_final_ln = init_ln(config.d_model);
  m.dec_final_ln = init_ln(config.d_model);
  m.out_w = glorot({config.d_model, m.tgt_vocab.size()}, rng);
  m.out_b = Tensor::zeros({m.tgt_vocab.size()});
  return m;
}

std::vector<Tensor> NmtModel::parameters() const {
  std::vector<Tensor> ts;
  std::vector<std::string> names;
  nmt_collect(*this, ts, names);
  return ts;
}

std::vector<std::string> NmtModel::parameter_names() const {
  std::vector<Tensor> ts;
  std::vector<std::string> names;
  nmt_collect(*this, ts, names);
  return names;
}

void NmtModel::set_trainable(bool trainable) {
  for (Tensor t : parameters()) t.set_requires_grad(trainable);
}

CausalLm CausalLm::init(const TransformerConfig& config, Vocabulary vocab, Tensor frozen_src_embed,
                        std::uint64_t seed) {
  config.validate();
  if (frozen_src_embed.ndim() != 2 || frozen_src_embed.shape()[0] != vocab.size()) {
    throw std::invalid_argument("causal lm: source table rows must match vocabulary size");
  }
  std::mt19937_64 rng(seed);
  CausalLm lm;
  lm.config = config;
  lm.vocab = std::move(vocab);
  lm.src_embed = std::move(frozen_src_embed);
  for (std::size_t i = 0; i < config.layers; ++i) lm.layers.push_back(init_layer(config, rng));
  lm.final_ln = init_ln(config.d_model);
  lm.out_w = glorot({config.d_model, lm.vocab.size()}, rng);
  lm.out_b = Tensor::zeros({lm.vocab.size()});
  return lm;
}

std::vector<Tensor> CausalLm::parameters() const {
  std::vector<Tensor> ts;
  std::vector<std::string> names;
  lm_collect(*this, ts, names);
  return ts;
}

std::vector<std::string> CausalLm::parameter_names() const {
  std::vector<Tensor> ts;
  std::vector<std::string> names;
  lm_collect(*this, ts, names);
  return names;
}

void CausalLm::set_trainable(bool trainable) {
  for (Tensor t : parameters()) t.set_requires_grad(trainable);
}

EmbeddingBridge EmbeddingBridge::init(std::size_t m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EmbeddingBridge b;
  b.weight = glorot({m, n}, rng);
  return b;
}

Tensor positional_encoding(std::size_t len, std::size_t d) {
  std::vector<double> data(len * d);
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(p) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      data[p * d + i] = std::sin(angle);
      if (i + 1 < d) data[p * d + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({len, d}, std::move(data));
}

namespace detail {

Tensor dropout(const Tensor& x, const ForwardOptions& opt) {
  if (!opt.dropout_rng || opt.dropout <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - opt.dropout);
  const double inv = 1.0 / (1.0 - opt.dropout);
  std::vector<double> mask(x.numel());
  for (double& v : mask) v = keep(*opt.dropout_rng) ? inv : 0.0;
  return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

Tensor causal_additive_mask(std::size_t len) {
  std::vector<double> data(len * len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = i + 1; j < len; ++j) data[i * len + j] = 1.0;
  }
  return Tensor::from_data({len, len}, std::move(data));
}

Tensor input_embedding(const Tensor& rows, std::size_t d, std::size_t len_axis_size) {
  Tensor scaled = scale(rows, std::sqrt(static_cast<double>(d)));
  return add(scaled, positional_encoding(len_axis_size, d));
}

Tensor attention(const AttentionParams& p, const TransformerConfig& cfg, const Tensor& q_in,
                 const Tensor& kv_in, const Tensor& block_mask, const ForwardOptions& opt) {
  const bool batched = q_in.ndim() == 3;
  const std::size_t b = batched ? q_in.shape()[0] : 1;
  const std::size_t lq = q_in.shape()[batched ? 1 : 0];
  const std::size_t lk = kv_in.shape()[batched ? 1 : 0];
  const std::size_t h = cfg.heads;
  const std::size_t dh = cfg.head_dim();

  Tensor q = matmul(q_in, p.wq);
  Tensor k = matmul(kv_in, p.wk);
  Tensor v = matmul(kv_in, p.wv);

  auto split_heads = [&](const Tensor& t, std::size_t len) {
    if (batched) return transpose(reshape(t, {b, len, h, dh}), 1, 2);  // [B, h, len, dh]
    return transpose(reshape(t, {len, h, dh}), 0, 1);                 // [h, len, dh]
  };
  q = split_heads(q, lq);
  k = split_heads(k, lk);
  v = split_heads(v, lk);

  Tensor scores = matmul(q, batched ? transpose(k, 2, 3) : transpose(k, 1, 2));
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
  if (block_mask.defined()) scores = mask_fill(scores, block_mask, -1e9);
  Tensor weights = softmax(scores);
  weights = dropout(weights, opt);

  Tensor ctx = matmul(weights, v);  // [*, h, lq, dh]
  ctx = batched ? reshape(transpose(ctx, 1, 2), {b, lq, h * dh})
                : reshape(transpose(ctx, 0, 1), {lq, h * dh});
  return matmul(ctx, p.wo);
}

namespace {

Tensor ffn_forward(const FfnParams& p, const Tensor& x, const ForwardOptions& opt) {
  Tensor h = gelu(add(matmul(x, p.w1), p.b1));
  return dropout(add(matmul(h, p.w2), p.b2), opt);
}

Tensor ln_forward(const LayerNormParams& p, const Tensor& x) { return layer_norm(x, p.gain, p.bias); }

}  // namespace

Tensor encoder_stack(const NmtModel& model, const Tensor& x0, const Tensor& pad_mask,
                     const ForwardOptions& opt) {
  Tensor x = x0;
  for (const TransformerLayer& l : model.encoder) {
    Tensor normed = ln_forward(l.ln1, x);
    x = add(x, dropout(attention(l.attn, model.config, normed, normed, pad_mask, opt), opt));
    x = add(x, ffn_forward(l.ffn, ln_forward(l.ln2, x), opt));
  }
  return ln_forward(model.enc_final_ln, x);
}

Tensor decoder_stack(const NmtModel& model, const Tensor& y0, const Tensor& memory,
                     const Tensor& causal_mask, const Tensor& cross_mask, const ForwardOptions& opt) {
  Tensor y = y0;
  for (const DecoderLayer& l : model.decoder) {
    Tensor normed = ln_forward(l.ln1, y);
    y = add(y, dropout(attention(l.self_attn, model.config, normed, normed, causal_mask, opt), opt));
    y = add(y,
            dropout(attention(l.cross_attn, model.config, ln_forward(l.ln2, y), memory, cross_mask, opt),
                    opt));
    y = add(y, ffn_forward(l.ffn, ln_forward(l.ln3, y), opt));
  }
  return ln_forward(model.dec_final_ln, y);
}

Tensor lm_stack(const CausalLm& lm, const Tensor& x0, const Tensor& causal_mask,
                const ForwardOptions& opt) {
  Tensor x = x0;
  for (const TransformerLayer& l : lm.layers) {
    Tensor normed = ln_forward(l.ln1, x);
    x = add(x, dropout(attention(l.attn, lm.config, normed, normed, causal_mask, opt), opt));
    x = add(x, ffn_forward(l.ffn, ln_forward(l.ln2, x), opt));
  }
  return ln_forward(lm.final_ln, x);
}

}  // namespace detail

Tensor source_embeddings(const NmtModel& model, std::span<const TokenId> src_ids) {
  return embedding_gather(model.src_embed, src_ids);
}

Tensor encode_source(const NmtModel& model, const Tensor& src_embeddings, std::mt19937_64* dropout_rng) {
  const std::size_t k = src_embeddings.shape()[src_embeddings.ndim() - 2];
  if (k > model.config.max_len) {
    throw std::invalid_argument("source length " + std::to_string(k) + " exceeds max_len " +
                                std::to_string(model.config.max_len));
  }
  detail::ForwardOptions opt{dropout_rng, dropout_rng ? model.config.dropout : 0.0};
  Tensor x = detail::input_embedding(src_embeddings, model.config.d_model, k);
  x = detail::dropout(x, opt);
  return detail::encoder_stack(model, x, Tensor(), opt);
}

Tensor nmt_logits(const NmtModel& model, const Tensor& src_embeddings, std::span<const TokenId> y_in,
                  std::mt19937_64* dropout_rng) {
  if (y_in.size() > model.config.max_len) {
    throw std::invalid_argument("target length " + std::to_string(y_in.size()) + " exceeds max_len " +
                                std::to_string(model.config.max_len));
  }
  detail::ForwardOptions opt{dropout_rng, dropout_rng ? model.config.dropout : 0.0};
  Tensor memory = encode_source(model, src_embeddings, dropout_rng);
  Tensor y = embedding_gather(model.tgt_embed, y_in);
  y = detail::input_embedding(y, model.config.d_model, y_in.size());
  y = detail::dropout(y, opt);
  Tensor dec =
      detail::decoder_stack(model, y, memory, detail::causal_additive_mask(y_in.size()), Tensor(), opt);
  return add(matmul(dec, model.out_w), model.out_b);
}

Tensor nmt_loss(const NmtModel& model, const Tensor& src_embeddings, std::span<const TokenId> y_ref) {
  if (y_ref.empty()) throw std::invalid_argument("nmt_loss: empty reference");
  if (y_ref.back() != Vocabulary::kEos) {
    throw std::invalid_argument("nmt_loss: reference must end with eos");
  }
  std::vector<TokenId> y_in;
  y_in.reserve(y_ref.size());
  y_in.push_back(Vocabulary::kBos);
  y_in.insert(y_in.end(), y_ref.begin(), y_ref.end() - 1);
  Tensor logits = nmt_logits(model, src_embeddings, y_in);
  return cross_entropy_from_logits(logits, y_ref);
}

Tensor nmt_loss(const NmtModel& model, std::span<const TokenId> src_ids,
                std::span<const TokenId> y_ref) {
  return nmt_loss(model, source_embeddings(model, src_ids), y_ref);
}

Tensor decode_step_logits(const NmtModel& model, const Tensor& memory,
                          const std::vector<std::vector<TokenId>>& prefixes) {
  if (prefixes.empty()) throw std::invalid_argument("decode_step_logits: no prefixes");
  const std::size_t b = prefixes.size();
  const std::size_t t = prefixes[0].size();
  std::vector<TokenId> flat;
  flat.reserve(b * t);
  for (const auto& p : prefixes) {
    if (p.size() != t) throw std::invalid_argument("decode_step_logits: ragged prefixes");
    flat.insert(flat.end(), p.begin(), p.end());
  }
  detail::ForwardOptions opt;
  Tensor y = embedding_gather(model.tgt_embed, flat);  // [b*t, d]
  y = reshape(y, {b, t, model.config.d_model});
  y = detail::input_embedding(y, model.config.d_model, t);  // PE rows broadcast over the batch
  std::vector<Tensor> mems(b, memory);
  Tensor mem_b = reshape(concat(mems, 0), {b, memory.shape()[0], memory.shape()[1]});
  Tensor dec = detail::decoder_stack(model, y, mem_b, detail::causal_additive_mask(t), Tensor(), opt);
  Tensor last = slice(dec, 1, t - 1, 1);  // [b, 1, d]
  return add(matmul(reshape(last, {b, model.config.d_model}), model.out_w), model.out_b);
}

Tensor lm_nll(const CausalLm& lm, const EmbeddingBridge& bridge, const Tensor& lm_inputs,
              std::span<const TokenId> targets) {
  const std::size_t k = targets.size();
  if (k == 0) throw std::invalid_argument("lm_nll: empty targets");
  if (lm_inputs.ndim() != 2 || lm_inputs.shape()[0] != k) {
    throw std::invalid_argument("lm_nll: expected [k, n] inputs with one row per target, got " +
                                shape_str(lm_inputs.shape()));
  }
  if (k > lm.config.max_len) throw std::invalid_argument("lm_nll: length exceeds max_len");

  const TokenId bos = Vocabulary::kBos;
  Tensor bos_row = bridge.apply(embedding_gather(lm.src_embed, std::span<const TokenId>(&bos, 1)));
  Tensor inputs = k == 1 ? bos_row : concat({bos_row, slice(lm_inputs, 0, 0, k - 1)}, 0);
  detail::ForwardOptions opt;
  Tensor x = detail::input_embedding(inputs, lm.config.d_model, k);
  Tensor out = detail::lm_stack(lm, x, detail::causal_additive_mask(k), opt);
  Tensor logits = add(matmul(out, lm.out_w), lm.out_b);
  return cross_entropy_from_logits(logits, targets);
}

Tensor lm_nll(const CausalLm& lm, const EmbeddingBridge& bridge, std::span<const TokenId> ids) {
  Tensor v = bridge.apply(embedding_gather(lm.src_embed, ids));
  return lm_nll(lm, bridge, v, ids);
}

}  // namespace gpal::model
