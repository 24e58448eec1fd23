#pragma once

#include "pbd/mask.hpp"
#include "pbd/ops.hpp"

namespace pbd {

// Additive form of a boolean mask: 0 where attention is allowed, -1e9 where
// not. -1e9 rather than -inf so the stabilized softmax never sees a NaN; the
// exp of (-1e9 - max) underflows to exactly zero, so disallowed keys get
// weight 0 regardless of their content.
template <class S>
TensorT<S> additive_mask_tensor(const AttentionMask& mask) {
  TensorT<S> t = TensorT<S>::zeros({mask.rows, mask.cols});
  for (std::size_t i = 0; i < mask.rows; ++i)
    for (std::size_t j = 0; j < mask.cols; ++j)
      if (!mask.at(i, j)) t.data()[i * mask.cols + j] = S(-1e9);
  return t;
}

template <class S>
TensorT<S> scaled_dot_attention(Tape<S>* tape, const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                const AttentionMask& mask) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw shape_error("scaled_dot_attention expects 2-d q/k/v");
  const std::size_t m = q.dim(0), d = q.dim(1), kk = k.dim(0);
  if (k.dim(1) != d || v.dim(0) != kk)
    throw shape_error("scaled_dot_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                      ", v " + shape_str(v.shape()) + " are inconsistent");
  if (mask.rows != m || mask.cols != kk)
    throw shape_error("scaled_dot_attention: mask [" + std::to_string(mask.rows) + "," +
                      std::to_string(mask.cols) + "] does not match scores [" + std::to_string(m) + "," +
                      std::to_string(kk) + "]");
  mask.check_no_empty_rows();

  TensorT<S> scores = matmul(tape, q, transpose(tape, k));
  scores = scale(tape, scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(d))));
  scores = add(tape, scores, additive_mask_tensor<S>(mask));
  TensorT<S> weights = softmax(tape, scores, 1);
  return matmul(tape, weights, v);
}

// Projection weights for multi-head attention; no projection biases.
template <class S>
struct MultiHeadParams {
  TensorT<S> wq, wk, wv, wo;  // each [d_model, d_model]
  std::size_t n_heads = 1;

  std::size_t d_model() const { return wq.dim(0); }
};

template <class S>
MultiHeadParams<S> init_multi_head(std::size_t d_model, std::size_t n_heads, Rng& rng);

template <class S>
TensorT<S> xavier_uniform(std::vector<std::size_t> shape, Rng& rng) {
  TensorT<S> t = TensorT<S>::zeros(std::move(shape));
  const double fan_in = static_cast<double>(t.dim(0));
  const double fan_out = static_cast<double>(t.dim(t.ndim() - 1));
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
  t.set_requires_grad(true);
  return t;
}

template <class S>
MultiHeadParams<S> init_multi_head(std::size_t d_model, std::size_t n_heads, Rng& rng) {
  if (n_heads == 0 || d_model % n_heads != 0)
    throw config_error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                       std::to_string(n_heads));
  MultiHeadParams<S> p;
  p.n_heads = n_heads;
  p.wq = xavier_uniform<S>({d_model, d_model}, rng);
  p.wk = xavier_uniform<S>({d_model, d_model}, rng);
  p.wv = xavier_uniform<S>({d_model, d_model}, rng);
  p.wo = xavier_uniform<S>({d_model, d_model}, rng);
  return p;
}

// Standard multi-head attention over an arbitrary mask. x_kv may be the
// concatenation [source || target] (the pseudo-bidirectional case) as long as
// the mask columns follow the same layout.
template <class S>
TensorT<S> multi_head_attention(Tape<S>* tape, const TensorT<S>& x_q, const TensorT<S>& x_kv,
                                const MultiHeadParams<S>& params, const AttentionMask& mask) {
  const std::size_t d_model = params.d_model();
  if (params.n_heads == 0 || d_model % params.n_heads != 0)
    throw config_error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                       std::to_string(params.n_heads));
  TensorT<S> q = matmul(tape, x_q, params.wq);
  TensorT<S> k = matmul(tape, x_kv, params.wk);
  TensorT<S> v = matmul(tape, x_kv, params.wv);
  const std::size_t h = params.n_heads;
  if (h == 1) return matmul(tape, scaled_dot_attention(tape, q, k, v, mask), params.wo);

  const std::size_t dh = d_model / h;
  std::vector<TensorT<S>> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    TensorT<S> qi = slice_cols(tape, q, i * dh, (i + 1) * dh);
    TensorT<S> ki = slice_cols(tape, k, i * dh, (i + 1) * dh);
    TensorT<S> vi = slice_cols(tape, v, i * dh, (i + 1) * dh);
    heads.push_back(scaled_dot_attention(tape, qi, ki, vi, mask));
  }
  return matmul(tape, concat_cols(tape, heads), params.wo);
}

}  // namespace pbd
