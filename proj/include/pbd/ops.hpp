#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>

#include "pbd/tensor.hpp"

namespace pbd {

template <class S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<EigenMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const EigenMat<S>>;

template <class S>
ConstMatMap<S> as_mat(const TensorT<S>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<S>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

namespace detail {

template <class S>
MatMap<S> grad_map(const TensorT<S>& t, std::size_t rows, std::size_t cols) {
  return MatMap<S>(t.grad_buffer().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_2d(const std::vector<std::size_t>& s, const char* op) {
  if (s.size() != 2) throw shape_error(std::string(op) + ": expected 2-d tensor, got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: 2d x 2d, batched 3d x 3d (matching batch), and 3d x 2d broadcast.
// Backward: dA = dC * B^T, dB = A^T * dC per batch slice.
template <class S>
TensorT<S> matmul(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3 || sb.size() > sa.size())
    throw shape_error("matmul: unsupported ranks " + shape_str(sa) + " vs " + shape_str(sb));
  const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (k != kb)
    throw shape_error("matmul: inner dimensions do not match: " + shape_str(sa) + " vs " + shape_str(sb));
  const std::size_t batch = sa.size() == 3 ? sa[0] : 1;
  if (sb.size() == 3 && sb[0] != batch)
    throw shape_error("matmul: batch dimensions do not match: " + shape_str(sa) + " vs " + shape_str(sb));
  const bool b_broadcast = sb.size() == 2;

  std::vector<std::size_t> out_shape = sa.size() == 3 ? std::vector<std::size_t>{batch, m, n}
                                                      : std::vector<std::size_t>{m, n};
  TensorT<S> out = TensorT<S>::zeros(std::move(out_shape));
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatMap<S> ma(a.data() + i * m * k, m, k);
    ConstMatMap<S> mb(b.data() + (b_broadcast ? 0 : i * k * n), k, n);
    MatMap<S>(out.data() + i * m * n, m, n).noalias() = ma * mb;
  }

  if (tracing(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, k, n, batch, b_broadcast, ag = a.requires_grad(), bg = b.requires_grad()] {
      if (!out.has_grad()) return;
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMatMap<S> dc(out.node()->grad.data() + i * m * n, m, n);
        if (ag) {
          ConstMatMap<S> mb(b.data() + (b_broadcast ? 0 : i * k * n), k, n);
          MatMap<S>(a.grad_buffer().data() + i * m * k, m, k).noalias() += dc * mb.transpose();
        }
        if (bg) {
          ConstMatMap<S> ma(a.data() + i * m * k, m, k);
          MatMap<S>(b.grad_buffer().data() + (b_broadcast ? 0 : i * k * n), k, n).noalias() +=
              ma.transpose() * dc;
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> transpose(Tape<S>* tape, const TensorT<S>& x) {
  detail::require_2d(x.shape(), "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  TensorT<S> out = TensorT<S>::zeros({c, r});
  MatMap<S>(out.data(), c, r) = as_mat(x, r, c).transpose();
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, r, c] {
      if (!out.has_grad()) return;
      detail::grad_map(x, r, c) += ConstMatMap<S>(out.node()->grad.data(), c, r).transpose();
    });
  }
  return out;
}

template <class S>
TensorT<S> add(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw shape_error("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tracing(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n, ag = a.requires_grad(), bg = b.requires_grad()] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      if (ag) {
        S* da = a.grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (bg) {
        S* db = b.grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

// x: [m,d] plus a broadcast row r of shape [d] or [1,d].
template <class S>
TensorT<S> add_row_broadcast(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& r) {
  detail::require_2d(x.shape(), "add_row_broadcast");
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (r.size() != d)
    throw shape_error("add_row_broadcast: row shape " + shape_str(r.shape()) + " does not match " +
                      shape_str(x.shape()));
  TensorT<S> out = TensorT<S>::zeros({m, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data()[i * d + j] = x.data()[i * d + j] + r.data()[j];
  if (tracing(tape, {&x, &r})) {
    out.set_requires_grad(true);
    tape->record([x, r, out, m, d, xg = x.requires_grad(), rg = r.requires_grad()] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      if (xg) {
        S* dx = x.grad_buffer().data();
        for (std::size_t i = 0; i < m * d; ++i) dx[i] += g[i];
      }
      if (rg) {
        S* dr = r.grad_buffer().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) dr[j] += g[i * d + j];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> scale(Tape<S>* tape, const TensorT<S>& x, S c) {
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, n, c] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      S* dx = x.grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * c;
    });
  }
  return out;
}

template <class S>
TensorT<S> mul(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw shape_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tracing(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n, ag = a.requires_grad(), bg = b.requires_grad()] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      if (ag) {
        S* da = a.grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * b.data()[i];
      }
      if (bg) {
        S* db = b.grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sum(Tape<S>* tape, const TensorT<S>& x) {
  S acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  TensorT<S> out = TensorT<S>::scalar(acc);
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, n = x.size()] {
      if (!out.has_grad()) return;
      const S g = out.node()->grad[0];
      S* dx = x.grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

template <class S>
TensorT<S> relu(Tape<S>* tape, const TensorT<S>& x) {
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, n] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      S* dx = x.grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i)
        if (x.data()[i] > S(0)) dx[i] += g[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> gelu(Tape<S>* tape, const TensorT<S>& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    double v = static_cast<double>(x.data()[i]);
    out.data()[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, n] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      S* dx = x.grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) {
        double v = static_cast<double>(x.data()[i]);
        double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        dx[i] += g[i] * static_cast<S>(phi + v * pdf);
      }
    });
  }
  return out;
}

// Numerically stabilized softmax along any axis (max subtraction per lane).
template <class S>
TensorT<S> softmax(Tape<S>* tape, const TensorT<S>& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size())
    throw contract_error("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  const std::size_t lane = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  TensorT<S> out = TensorT<S>::zeros(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * lane * inner + in;
      S mx = x.data()[base];
      for (std::size_t l = 1; l < lane; ++l) mx = std::max(mx, x.data()[base + l * inner]);
      S total = 0;
      for (std::size_t l = 0; l < lane; ++l) {
        S e = std::exp(x.data()[base + l * inner] - mx);
        out.data()[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < lane; ++l) out.data()[base + l * inner] /= total;
    }
  }

  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, outer, inner, lane] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      const S* y = out.data();
      S* dx = x.grad_buffer().data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * lane * inner + in;
          S dot = 0;
          for (std::size_t l = 0; l < lane; ++l) dot += g[base + l * inner] * y[base + l * inner];
          for (std::size_t l = 0; l < lane; ++l) {
            const std::size_t idx = base + l * inner;
            dx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Per-row layer normalization with affine gain/bias.
template <class S>
TensorT<S> layer_norm(Tape<S>* tape, const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                      S eps = S(1e-5)) {
  detail::require_2d(x.shape(), "layer_norm");
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (gain.size() != d || bias.size() != d)
    throw shape_error("layer_norm: gain/bias shape " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                      " does not match feature dim of " + shape_str(x.shape()));
  if (!(eps > S(0))) throw contract_error("layer_norm: eps must be positive");

  TensorT<S> out = TensorT<S>::zeros({m, d});
  std::vector<S> inv_sigma(m), xhat(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    const S* row = x.data() + i * d;
    S mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<S>(d);
    S var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      S c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      S h = (row[j] - mean) * is;
      xhat[i * d + j] = h;
      out.data()[i * d + j] = gain.data()[j] * h + bias.data()[j];
    }
  }

  if (tracing(tape, {&x, &gain, &bias})) {
    out.set_requires_grad(true);
    tape->record([x, gain, bias, out, m, d, inv_sigma = std::move(inv_sigma), xhat = std::move(xhat),
                  xg = x.requires_grad(), gg = gain.requires_grad(), bg = bias.requires_grad()] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const S* grow = g + i * d;
        const S* hrow = xhat.data() + i * d;
        if (gg) {
          S* dgain = gain.grad_buffer().data();
          for (std::size_t j = 0; j < d; ++j) dgain[j] += grow[j] * hrow[j];
        }
        if (bg) {
          S* dbias = bias.grad_buffer().data();
          for (std::size_t j = 0; j < d; ++j) dbias[j] += grow[j];
        }
        if (xg) {
          S mean_gd = 0, mean_gdh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const S gd = grow[j] * gain.data()[j];
            mean_gd += gd;
            mean_gdh += gd * hrow[j];
          }
          mean_gd /= static_cast<S>(d);
          mean_gdh /= static_cast<S>(d);
          S* dx = x.grad_buffer().data() + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            const S gd = grow[j] * gain.data()[j];
            dx[j] += (gd - mean_gd - hrow[j] * mean_gdh) * inv_sigma[i];
          }
        }
      }
    });
  }
  return out;
}

// Row gather from an embedding table; backward scatter-adds into the table.
template <class S>
TensorT<S> embedding_rows(Tape<S>* tape, const TensorT<S>& table, std::span<const std::int32_t> ids) {
  detail::require_2d(table.shape(), "embedding_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  const std::size_t n = ids.size();
  if (n == 0) throw contract_error("embedding_rows: empty id list");
  TensorT<S> out = TensorT<S>::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw index_error("embedding id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    std::copy_n(table.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
  }
  if (tracing(tape, {&table})) {
    out.set_requires_grad(true);
    std::vector<std::int32_t> ids_copy(ids.begin(), ids.end());
    tape->record([table, out, d, ids_copy = std::move(ids_copy)] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      S* dt = table.grad_buffer().data();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        S* row = dt + static_cast<std::size_t>(ids_copy[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
      }
    });
  }
  return out;
}

// Batched lookup: ids [B,L] -> [B,L,D].
template <class S>
TensorT<S> embedding_lookup(Tape<S>* tape, const TensorT<S>& table, const IntMatrix& ids) {
  TensorT<S> flat = embedding_rows(tape, table, std::span<const std::int32_t>(ids.v));
  TensorT<S> out = TensorT<S>::zeros({ids.rows, ids.cols, table.dim(1)});
  out.values() = flat.values();
  if (flat.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([flat, out] {
      if (!out.has_grad()) return;
      S* df = flat.grad_buffer().data();
      const S* g = out.node()->grad.data();
      for (std::size_t i = 0; i < out.size(); ++i) df[i] += g[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_rows(Tape<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_2d(a.shape(), "concat_rows");
  detail::require_2d(b.shape(), "concat_rows");
  if (a.dim(1) != b.dim(1))
    throw shape_error("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t ra = a.dim(0), rb = b.dim(0), d = a.dim(1);
  TensorT<S> out = TensorT<S>::zeros({ra + rb, d});
  std::copy_n(a.data(), ra * d, out.data());
  std::copy_n(b.data(), rb * d, out.data() + ra * d);
  if (tracing(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, ra, rb, d, ag = a.requires_grad(), bg = b.requires_grad()] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      if (ag) {
        S* da = a.grad_buffer().data();
        for (std::size_t i = 0; i < ra * d; ++i) da[i] += g[i];
      }
      if (bg) {
        S* db = b.grad_buffer().data();
        for (std::size_t i = 0; i < rb * d; ++i) db[i] += g[ra * d + i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_rows(Tape<S>* tape, const TensorT<S>& x, std::size_t r0, std::size_t r1) {
  detail::require_2d(x.shape(), "slice_rows");
  if (r0 >= r1 || r1 > x.dim(0))
    throw contract_error("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  TensorT<S> out = TensorT<S>::zeros({r1 - r0, d});
  std::copy_n(x.data() + r0 * d, (r1 - r0) * d, out.data());
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, r0, d, n = (r1 - r0) * d] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      S* dx = x.grad_buffer().data() + r0 * d;
      for (std::size_t i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_cols(Tape<S>* tape, const TensorT<S>& x, std::size_t c0, std::size_t c1) {
  detail::require_2d(x.shape(), "slice_cols");
  if (c0 >= c1 || c1 > x.dim(1))
    throw contract_error("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), d = x.dim(1), w = c1 - c0;
  TensorT<S> out = TensorT<S>::zeros({m, w});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data() + i * d + c0, w, out.data() + i * w);
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, m, d, c0, w] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      S* dx = x.grad_buffer().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) dx[i * d + c0 + j] += g[i * w + j];
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_cols(Tape<S>* tape, const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw contract_error("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_2d(p.shape(), "concat_cols");
    if (p.dim(0) != m)
      throw shape_error("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.dim(1);
  }
  TensorT<S> out = TensorT<S>::zeros({m, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p.data() + i * w, w, out.data() + i * total + off);
    off += w;
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    tape->record([parts, out, m, total] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          S* dp = p.grad_buffer().data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) dp[i * w + j] += g[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

// Stack per-example [m_i, v] matrices into a zero-padded [B, m_max, v] block.
// m_max 0 means "largest part".
template <class S>
TensorT<S> stack_rows_padded(Tape<S>* tape, const std::vector<TensorT<S>>& parts, std::size_t m_max = 0) {
  if (parts.empty()) throw contract_error("stack_rows_padded: no inputs");
  if (m_max == 0)
    for (const auto& p : parts) m_max = std::max(m_max, p.dim(0));
  const std::size_t v = parts[0].dim(1);
  for (const auto& p : parts) {
    detail::require_2d(p.shape(), "stack_rows_padded");
    if (p.dim(1) != v || p.dim(0) > m_max)
      throw shape_error("stack_rows_padded: bad part shape " + shape_str(p.shape()));
  }
  const std::size_t b = parts.size();
  TensorT<S> out = TensorT<S>::zeros({b, m_max, v});
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(parts[i].data(), parts[i].size(), out.data() + i * m_max * v);
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    tape->record([parts, out, m_max, v] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!parts[i].requires_grad()) continue;
        S* dp = parts[i].grad_buffer().data();
        const std::size_t n = parts[i].size();
        for (std::size_t j = 0; j < n; ++j) dp[j] += g[i * m_max * v + j];
      }
    });
  }
  return out;
}

// Inverted dropout; identity when rate <= 0. Mask drawn from the caller's rng.
template <class S>
TensorT<S> dropout(Tape<S>* tape, const TensorT<S>& x, double rate, Rng* rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw contract_error("dropout rate must be < 1");
  if (!rng) throw contract_error("dropout requires an rng");
  const std::size_t n = x.size();
  std::vector<S> mask(n);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng->uniform() < rate ? S(0) : keep_scale;
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * mask[i];
  if (tracing(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, n, mask = std::move(mask)] {
      if (!out.has_grad()) return;
      const S* g = out.node()->grad.data();
      S* dx = x.grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * mask[i];
    });
  }
  return out;
}

}  // namespace pbd
