#pragma once

#include "pbd/model.hpp"

namespace pbd {

namespace detail {

template <class S>
void layer_norm_rows(EigenMat<S>& x, const TensorT<S>& gain, const TensorT<S>& bias, S eps = S(1e-5)) {
  const Eigen::Index d = x.cols();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S mean = x.row(i).sum() / static_cast<S>(d);
    S var = (x.row(i).array() - mean).square().sum() / static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + eps);
    for (Eigen::Index j = 0; j < d; ++j)
      x(i, j) = gain.data()[j] * ((x(i, j) - mean) * inv) + bias.data()[j];
  }
}

template <class S>
void softmax_row(EigenMat<S>& row) {
  const S mx = row.maxCoeff();
  row = (row.array() - mx).exp();
  row /= row.sum();
}

}  // namespace detail

// Per-layer key/value cache for incremental decoding. The source-side keys
// (the copy region) and the cross-attention keys are fixed per session and
// precomputed; the decoder-side keys grow by one row per step, so step t does
// O(t + n) attention work.
template <class S>
struct DecodeCache {
  bool initialized = false;
  std::size_t t = 0;  // target tokens consumed so far
  std::size_t n = 0;  // source length
  std::vector<EigenMat<S>> src_k, src_v;      // [n, d] per layer, pbd only
  std::vector<EigenMat<S>> dec_k, dec_v;      // [t, d] per layer
  std::vector<EigenMat<S>> cross_k, cross_v;  // [n, d] per layer
};

template <class S>
DecodeCache<S> make_decode_cache(const TransformerModel<S>& model, const EncoderStates<S>& enc) {
  const ModelConfig& cfg = model.cfg;
  DecodeCache<S> cache;
  cache.initialized = true;
  cache.n = enc.source_len();
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerParams<S>& trunk = model.dec_layers[l];
    if (cfg.use_pbd) {
      const TensorT<S>& src = enc.states[cfg.copy_from_layer_output ? l + 1 : l];
      EigenMat<S> s = as_mat(src, cache.n, d);
      if (cfg.use_segment) {
        const TensorT<S>& seg = model.seg_table(l);
        s.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>::Map(seg.data() + d, d);
      }
      detail::layer_norm_rows(s, trunk.norm1_gain, trunk.norm1_bias);
      cache.src_k.push_back(s * as_mat(trunk.self_attn.wk, d, d));
      cache.src_v.push_back(s * as_mat(trunk.self_attn.wv, d, d));
    } else {
      cache.src_k.emplace_back(0, d);
      cache.src_v.emplace_back(0, d);
    }
    const CrossParams<S>& cross = model.cross_layers[l];
    EigenMat<S> top = as_mat(enc.top(), cache.n, d);
    cache.cross_k.push_back(top * as_mat(cross.cross_attn.wk, d, d));
    cache.cross_v.push_back(top * as_mat(cross.cross_attn.wv, d, d));
    cache.dec_k.emplace_back(0, d);
    cache.dec_v.emplace_back(0, d);
  }
  return cache;
}

// One incremental decoder step: returns the logits for output position t
// where t == prefix_ids.size(). The pseudo-future keys at step t are the
// source rows t+1..n; once t >= n this degrades to plain causal decoding.
template <class S>
TensorT<S> decode_step(const TransformerModel<S>& model, const EncoderStates<S>& enc,
                       std::span<const std::int32_t> prefix_ids, DecodeCache<S>& cache) {
  const ModelConfig& cfg = model.cfg;
  if (prefix_ids.empty() || prefix_ids.front() != BOS_ID)
    throw contract_error("decode_step: prefix must begin with BOS");
  if (!cache.initialized) cache = make_decode_cache(model, enc);
  if (prefix_ids.size() != cache.t + 1)
    throw contract_error("decode_step: prefix length " + std::to_string(prefix_ids.size()) +
                         " does not extend cache at t=" + std::to_string(cache.t));
  if (prefix_ids.size() > cfg.max_len)
    throw length_error("prefix length " + std::to_string(prefix_ids.size()) + " exceeds max_len " +
                       std::to_string(cfg.max_len));
  const std::size_t t = prefix_ids.size();
  const std::size_t d = cfg.d_model;
  const std::size_t h = cfg.n_heads;
  const std::size_t dh = d / h;
  const std::int32_t last = prefix_ids.back();
  if (last < 0 || static_cast<std::size_t>(last) >= cfg.vocab_size)
    throw index_error("token id " + std::to_string(last) + " out of range");

  EigenMat<S> x = as_mat(model.tok_emb, cfg.vocab_size, d).row(last) *
                  static_cast<S>(std::sqrt(static_cast<double>(d)));
  x += as_mat(model.pos_emb, cfg.max_len, d).row(t - 1);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerParams<S>& trunk = model.dec_layers[l];
    EigenMat<S> dec_in = x;
    if (cfg.use_pbd && cfg.use_segment)
      dec_in.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>::Map(model.seg_table(l).data(), d);
    EigenMat<S> qn = dec_in;
    detail::layer_norm_rows(qn, trunk.norm1_gain, trunk.norm1_bias);
    EigenMat<S> q = qn * as_mat(trunk.self_attn.wq, d, d);
    EigenMat<S>& dk = cache.dec_k[l];
    EigenMat<S>& dv = cache.dec_v[l];
    dk.conservativeResize(static_cast<Eigen::Index>(t), dk.cols());
    dv.conservativeResize(static_cast<Eigen::Index>(t), dv.cols());
    dk.row(t - 1) = qn * as_mat(trunk.self_attn.wk, d, d);
    dv.row(t - 1) = qn * as_mat(trunk.self_attn.wv, d, d);

    const std::size_t src_rows = (cfg.use_pbd && t < cache.n) ? cache.n - t : 0;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    EigenMat<S> attn(1, d);
    for (std::size_t i = 0; i < h; ++i) {
      const auto qh = q.middleCols(i * dh, dh);
      EigenMat<S> scores(1, src_rows + t);
      if (src_rows > 0)
        scores.leftCols(src_rows) =
            qh * cache.src_k[l].block(t, i * dh, src_rows, dh).transpose() * inv_sqrt_dh;
      scores.rightCols(t) = qh * dk.middleCols(i * dh, dh).transpose() * inv_sqrt_dh;
      detail::softmax_row(scores);
      EigenMat<S> out = scores.rightCols(t) * dv.middleCols(i * dh, dh);
      if (src_rows > 0) out += scores.leftCols(src_rows) * cache.src_v[l].block(t, i * dh, src_rows, dh);
      attn.middleCols(i * dh, dh) = out;
    }
    x += attn * as_mat(trunk.self_attn.wo, d, d);

    const CrossParams<S>& cross = model.cross_layers[l];
    EigenMat<S> cq = x;
    detail::layer_norm_rows(cq, cross.norm_gain, cross.norm_bias);
    EigenMat<S> q2 = cq * as_mat(cross.cross_attn.wq, d, d);
    EigenMat<S> cattn(1, d);
    for (std::size_t i = 0; i < h; ++i) {
      const auto qh = q2.middleCols(i * dh, dh);
      EigenMat<S> scores = qh * cache.cross_k[l].middleCols(i * dh, dh).transpose() * inv_sqrt_dh;
      detail::softmax_row(scores);
      cattn.middleCols(i * dh, dh) = scores * cache.cross_v[l].middleCols(i * dh, dh);
    }
    x += cattn * as_mat(cross.cross_attn.wo, d, d);

    EigenMat<S> fin = x;
    detail::layer_norm_rows(fin, trunk.norm2_gain, trunk.norm2_bias);
    EigenMat<S> hmid = fin * as_mat(trunk.ffn_w1, d, cfg.d_ff);
    hmid.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>::Map(trunk.ffn_b1.data(), cfg.d_ff);
    if (cfg.gelu_ff) {
      for (Eigen::Index j = 0; j < hmid.cols(); ++j) {
        const double v = static_cast<double>(hmid(0, j));
        hmid(0, j) = static_cast<S>(0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244)));
      }
    } else {
      hmid = hmid.cwiseMax(S(0));
    }
    EigenMat<S> f = hmid * as_mat(trunk.ffn_w2, cfg.d_ff, d);
    f.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>::Map(trunk.ffn_b2.data(), d);
    x += f;
  }

  EigenMat<S> logits =
      cfg.tie_output_embedding
          ? EigenMat<S>(x * as_mat(model.tok_emb, cfg.vocab_size, d).transpose())
          : EigenMat<S>(x * as_mat(model.out_proj, d, cfg.vocab_size));
  cache.t = t;
  TensorT<S> out = TensorT<S>::zeros({cfg.vocab_size});
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) out.data()[v] = logits(0, static_cast<Eigen::Index>(v));
  return out;
}

}  // namespace pbd
