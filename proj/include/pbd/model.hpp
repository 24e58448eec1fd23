#pragma once

#include <optional>
#include <string>

#include "pbd/attention.hpp"

namespace pbd {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_len = 64;
  double dropout_rate = 0.1;

  bool use_pbd = true;           // off reproduces a plain causal decoder
  bool use_segment = true;       // mark copied vs generated tokens
  bool share_params = true;      // alias encoder/decoder trunks
  bool tie_output_embedding = true;

  bool learned_positions = true;      // sinusoidal table when false (not a parameter)
  bool gelu_ff = false;               // relu otherwise
  bool copy_from_layer_output = false;  // copy encoder layer's output instead of its input
  bool segment_per_layer = false;       // one 2 x d table per decoder layer instead of a shared one

  void validate() const {
    if (vocab_size < 5) throw config_error("vocab_size must cover the 4 specials plus at least one symbol");
    if (d_model == 0 || n_layers == 0 || d_ff == 0 || max_len == 0)
      throw config_error("model dimensions must be positive");
    if (n_heads == 0 || d_model % n_heads != 0)
      throw config_error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                         std::to_string(n_heads));
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw config_error("dropout_rate must be in [0,1)");
  }

  bool same_structure(const ModelConfig& o) const {
    return vocab_size == o.vocab_size && d_model == o.d_model && n_heads == o.n_heads &&
           n_layers == o.n_layers && d_ff == o.d_ff && max_len == o.max_len && use_pbd == o.use_pbd &&
           use_segment == o.use_segment && share_params == o.share_params &&
           tie_output_embedding == o.tie_output_embedding && learned_positions == o.learned_positions &&
           gelu_ff == o.gelu_ff && copy_from_layer_output == o.copy_from_layer_output &&
           segment_per_layer == o.segment_per_layer;
  }
};

// Forward-pass context: tape for training, dropout for regularization.
// Default-constructed = pure inference.
template <class S>
struct Forward {
  Tape<S>* tape = nullptr;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

// The shared trunk of one transformer block: self-attention, feed-forward and
// their two pre-norms. With share_params the decoder layer holds the same
// tensors as the encoder layer at the same depth.
template <class S>
struct LayerParams {
  MultiHeadParams<S> self_attn;
  TensorT<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  TensorT<S> norm1_gain, norm1_bias;  // before self-attention
  TensorT<S> norm2_gain, norm2_bias;  // before feed-forward
};

// Decoder-only parameters; never shared with the encoder.
template <class S>
struct CrossParams {
  MultiHeadParams<S> cross_attn;
  TensorT<S> norm_gain, norm_bias;
};

// Per-layer encoder outputs: states[0] is the embedded input, states[l] the
// output of encoder layer l. All of them are kept so each decoder layer can
// take its copied pseudo-future keys from the matching depth.
template <class S>
struct EncoderStates {
  std::vector<TensorT<S>> states;

  std::size_t source_len() const { return states.at(0).dim(0); }
  const TensorT<S>& top() const { return states.back(); }
};

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> breakdown;
};

namespace detail {

template <class S>
TensorT<S> table_init(std::vector<std::size_t> shape, Rng& rng) {
  TensorT<S> t = TensorT<S>::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(-0.1, 0.1));
  t.set_requires_grad(true);
  return t;
}

template <class S>
TensorT<S> sinusoidal_table(std::size_t max_len, std::size_t d_model) {
  TensorT<S> t = TensorT<S>::zeros({max_len, d_model});
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t j = 0; j < d_model; ++j) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, 2.0 * std::floor(j / 2.0) / static_cast<double>(d_model));
      t.data()[pos * d_model + j] = static_cast<S>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return t;  // constant; not a parameter
}

template <class S>
LayerParams<S> init_layer(const ModelConfig& cfg, Rng& rng) {
  LayerParams<S> l;
  l.self_attn = init_multi_head<S>(cfg.d_model, cfg.n_heads, rng);
  l.ffn_w1 = xavier_uniform<S>({cfg.d_model, cfg.d_ff}, rng);
  l.ffn_b1 = TensorT<S>::zeros({cfg.d_ff}).set_requires_grad(true);
  l.ffn_w2 = xavier_uniform<S>({cfg.d_ff, cfg.d_model}, rng);
  l.ffn_b2 = TensorT<S>::zeros({cfg.d_model}).set_requires_grad(true);
  l.norm1_gain = TensorT<S>::full({cfg.d_model}, S(1)).set_requires_grad(true);
  l.norm1_bias = TensorT<S>::zeros({cfg.d_model}).set_requires_grad(true);
  l.norm2_gain = TensorT<S>::full({cfg.d_model}, S(1)).set_requires_grad(true);
  l.norm2_bias = TensorT<S>::zeros({cfg.d_model}).set_requires_grad(true);
  return l;
}

}  // namespace detail

template <class S>
class TransformerModel {
public:
  ModelConfig cfg;
  TensorT<S> tok_emb;                    // [V, d]
  TensorT<S> pos_emb;                    // [max_len, d]; constant when sinusoidal
  std::vector<TensorT<S>> seg_tables;    // [2, d] each; row 0 generated, row 1 copied
  std::vector<LayerParams<S>> enc_layers;
  std::vector<LayerParams<S>> dec_layers;  // aliases enc_layers when share_params
  std::vector<CrossParams<S>> cross_layers;
  TensorT<S> out_proj;  // [d, V]; invalid handle when tied

  static TransformerModel init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    TransformerModel m;
    m.cfg = config;
    Rng rng(seed);
    m.tok_emb = detail::table_init<S>({config.vocab_size, config.d_model}, rng);
    m.pos_emb = config.learned_positions
                    ? detail::table_init<S>({config.max_len, config.d_model}, rng)
                    : detail::sinusoidal_table<S>(config.max_len, config.d_model);
    const std::size_t n_seg = config.segment_per_layer ? config.n_layers : 1;
    for (std::size_t i = 0; i < n_seg; ++i)
      m.seg_tables.push_back(detail::table_init<S>({2, config.d_model}, rng));
    for (std::size_t l = 0; l < config.n_layers; ++l)
      m.enc_layers.push_back(detail::init_layer<S>(config, rng));
    if (config.share_params) {
      m.dec_layers = m.enc_layers;  // handle copies: same storage
    } else {
      for (std::size_t l = 0; l < config.n_layers; ++l)
        m.dec_layers.push_back(detail::init_layer<S>(config, rng));
    }
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      CrossParams<S> c;
      c.cross_attn = init_multi_head<S>(config.d_model, config.n_heads, rng);
      c.norm_gain = TensorT<S>::full({config.d_model}, S(1)).set_requires_grad(true);
      c.norm_bias = TensorT<S>::zeros({config.d_model}).set_requires_grad(true);
      m.cross_layers.push_back(std::move(c));
    }
    if (!config.tie_output_embedding)
      m.out_proj = xavier_uniform<S>({config.d_model, config.vocab_size}, rng);
    return m;
  }

  const TensorT<S>& seg_table(std::size_t layer) const {
    return seg_tables[cfg.segment_per_layer ? layer : 0];
  }

  // Unique trainable parameters, shared storage listed once, in a fixed order.
  std::vector<std::pair<std::string, TensorT<S>>> named_params() const {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    out.emplace_back("tok_emb", tok_emb);
    if (cfg.learned_positions) out.emplace_back("pos_emb", pos_emb);
    for (std::size_t i = 0; i < seg_tables.size(); ++i)
      out.emplace_back("seg." + std::to_string(i), seg_tables[i]);
    auto add_trunk = [&out](const std::string& prefix, const LayerParams<S>& l) {
      out.emplace_back(prefix + ".self.wq", l.self_attn.wq);
      out.emplace_back(prefix + ".self.wk", l.self_attn.wk);
      out.emplace_back(prefix + ".self.wv", l.self_attn.wv);
      out.emplace_back(prefix + ".self.wo", l.self_attn.wo);
      out.emplace_back(prefix + ".ffn.w1", l.ffn_w1);
      out.emplace_back(prefix + ".ffn.b1", l.ffn_b1);
      out.emplace_back(prefix + ".ffn.w2", l.ffn_w2);
      out.emplace_back(prefix + ".ffn.b2", l.ffn_b2);
      out.emplace_back(prefix + ".norm1.gain", l.norm1_gain);
      out.emplace_back(prefix + ".norm1.bias", l.norm1_bias);
      out.emplace_back(prefix + ".norm2.gain", l.norm2_gain);
      out.emplace_back(prefix + ".norm2.bias", l.norm2_bias);
    };
    for (std::size_t l = 0; l < cfg.n_layers; ++l) add_trunk("enc." + std::to_string(l), enc_layers[l]);
    if (!cfg.share_params)
      for (std::size_t l = 0; l < cfg.n_layers; ++l) add_trunk("dec." + std::to_string(l), dec_layers[l]);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string prefix = "dec." + std::to_string(l);
      out.emplace_back(prefix + ".cross.wq", cross_layers[l].cross_attn.wq);
      out.emplace_back(prefix + ".cross.wk", cross_layers[l].cross_attn.wk);
      out.emplace_back(prefix + ".cross.wv", cross_layers[l].cross_attn.wv);
      out.emplace_back(prefix + ".cross.wo", cross_layers[l].cross_attn.wo);
      out.emplace_back(prefix + ".cross_norm.gain", cross_layers[l].norm_gain);
      out.emplace_back(prefix + ".cross_norm.bias", cross_layers[l].norm_bias);
    }
    if (!cfg.tie_output_embedding) out.emplace_back("out_proj", out_proj);
    return out;
  }

  EncoderStates<S> encode(std::span<const std::int32_t> source_ids, Forward<S> fwd = {}) const {
    if (source_ids.empty()) throw contract_error("encode: empty source");
    if (source_ids.size() > cfg.max_len)
      throw length_error("source length " + std::to_string(source_ids.size()) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
    const std::size_t n = source_ids.size();
    TensorT<S> x = embed(source_ids, fwd);
    EncoderStates<S> enc;
    enc.states.push_back(x);
    const AttentionMask full = build_all_allowed_mask(n, n);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const LayerParams<S>& trunk = enc_layers[l];
      TensorT<S> qn = layer_norm(fwd.tape, x, trunk.norm1_gain, trunk.norm1_bias);
      TensorT<S> a = multi_head_attention(fwd.tape, qn, qn, trunk.self_attn, full);
      x = add(fwd.tape, x, dropout(fwd.tape, a, fwd.dropout, fwd.rng));
      TensorT<S> f = feed_forward(fwd.tape, layer_norm(fwd.tape, x, trunk.norm2_gain, trunk.norm2_bias), trunk);
      x = add(fwd.tape, x, dropout(fwd.tape, f, fwd.dropout, fwd.rng));
      enc.states.push_back(x);
    }
    return enc;
  }

  // Teacher-forced forward over the whole target prefix matrix in one pass.
  // With use_pbd the self-attention keys/values at layer l are the
  // concatenation of the copied encoder states for that depth and the decoder
  // states, under the pseudo-bidirectional mask.
  TensorT<S> decode_parallel(const EncoderStates<S>& enc, std::span<const std::int32_t> target_input_ids,
                             Forward<S> fwd = {}) const {
    if (target_input_ids.empty() || target_input_ids.front() != BOS_ID)
      throw contract_error("decode_parallel: target input must begin with BOS");
    if (target_input_ids.size() > cfg.max_len)
      throw length_error("target length " + std::to_string(target_input_ids.size()) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
    if (enc.states.size() != cfg.n_layers + 1)
      throw contract_error("decode_parallel: encoder states depth mismatch");
    const std::size_t n = enc.source_len();
    const std::size_t m = target_input_ids.size();
    TensorT<S> x = embed(target_input_ids, fwd);
    const AttentionMask pbd_mask = cfg.use_pbd ? build_pbd_mask(n, m) : AttentionMask();
    const AttentionMask causal = cfg.use_pbd ? AttentionMask() : build_causal_mask(m);
    const AttentionMask cross_mask = build_all_allowed_mask(m, n);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const LayerParams<S>& trunk = dec_layers[l];
      TensorT<S> a;
      if (cfg.use_pbd) {
        TensorT<S> src = enc.states[cfg.copy_from_layer_output ? l + 1 : l];
        TensorT<S> dec_in = x;
        if (cfg.use_segment) {
          src = add_row_broadcast(fwd.tape, src, slice_rows(fwd.tape, seg_table(l), 1, 2));
          dec_in = add_row_broadcast(fwd.tape, dec_in, slice_rows(fwd.tape, seg_table(l), 0, 1));
        }
        TensorT<S> qn = layer_norm(fwd.tape, dec_in, trunk.norm1_gain, trunk.norm1_bias);
        TensorT<S> srcn = layer_norm(fwd.tape, src, trunk.norm1_gain, trunk.norm1_bias);
        TensorT<S> kv = concat_rows(fwd.tape, srcn, qn);
        a = multi_head_attention(fwd.tape, qn, kv, trunk.self_attn, pbd_mask);
      } else {
        TensorT<S> qn = layer_norm(fwd.tape, x, trunk.norm1_gain, trunk.norm1_bias);
        a = multi_head_attention(fwd.tape, qn, qn, trunk.self_attn, causal);
      }
      x = add(fwd.tape, x, dropout(fwd.tape, a, fwd.dropout, fwd.rng));
      const CrossParams<S>& cross = cross_layers[l];
      TensorT<S> cq = layer_norm(fwd.tape, x, cross.norm_gain, cross.norm_bias);
      TensorT<S> c = multi_head_attention(fwd.tape, cq, enc.top(), cross.cross_attn, cross_mask);
      x = add(fwd.tape, x, dropout(fwd.tape, c, fwd.dropout, fwd.rng));
      TensorT<S> f = feed_forward(fwd.tape, layer_norm(fwd.tape, x, trunk.norm2_gain, trunk.norm2_bias), trunk);
      x = add(fwd.tape, x, dropout(fwd.tape, f, fwd.dropout, fwd.rng));
    }
    return output_logits(fwd.tape, x);
  }

private:
  TensorT<S> embed(std::span<const std::int32_t> ids, Forward<S>& fwd) const {
    TensorT<S> x = embedding_rows(fwd.tape, tok_emb, ids);
    x = scale(fwd.tape, x, static_cast<S>(std::sqrt(static_cast<double>(cfg.d_model))));
    x = add(fwd.tape, x, slice_rows(fwd.tape, pos_emb, 0, ids.size()));
    return dropout(fwd.tape, x, fwd.dropout, fwd.rng);
  }

  TensorT<S> feed_forward(Tape<S>* tape, const TensorT<S>& x, const LayerParams<S>& l) const {
    TensorT<S> h = add_row_broadcast(tape, matmul(tape, x, l.ffn_w1), l.ffn_b1);
    h = cfg.gelu_ff ? gelu(tape, h) : relu(tape, h);
    return add_row_broadcast(tape, matmul(tape, h, l.ffn_w2), l.ffn_b2);
  }

  TensorT<S> output_logits(Tape<S>* tape, const TensorT<S>& x) const {
    if (cfg.tie_output_embedding) return matmul(tape, x, transpose(tape, tok_emb));
    return matmul(tape, x, out_proj);
  }
};

template <class S>
TransformerModel<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  return TransformerModel<S>::init(config, seed);
}

// Closed-form parameter count; the unit tests cross-check it against a direct
// enumeration of every stored float.
inline ParamCount count_params(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, v = cfg.vocab_size, l = cfg.n_layers, ff = cfg.d_ff;
  const std::size_t attn = 4 * d * d;
  const std::size_t ffn = d * ff + ff + ff * d + d;
  const std::size_t norms = 4 * d;  // two gain/bias pairs
  const std::size_t trunk = attn + ffn + norms;
  ParamCount pc;
  auto push = [&pc](const std::string& name, std::size_t count) {
    pc.breakdown.emplace_back(name, count);
    pc.total += count;
  };
  push("token_embedding", v * d);
  push("positions", cfg.learned_positions ? cfg.max_len * d : 0);
  push("segment", (cfg.segment_per_layer ? l : 1) * 2 * d);
  push("encoder_trunk", l * trunk);
  push("decoder_trunk", cfg.share_params ? 0 : l * trunk);
  push("cross_attention", l * (4 * d * d + 2 * d));
  push("output_projection", cfg.tie_output_embedding ? 0 : d * v);
  return pc;
}

template <class S>
ParamCount count_params(const TransformerModel<S>& model) {
  return count_params(model.cfg);
}

// Per-layer size of the trunk that parameter sharing deduplicates.
inline std::size_t shared_trunk_params_per_layer(const ModelConfig& cfg) {
  return 4 * cfg.d_model * cfg.d_model + (cfg.d_model * cfg.d_ff + cfg.d_ff + cfg.d_ff * cfg.d_model + cfg.d_model) +
         4 * cfg.d_model;
}

}  // namespace pbd
