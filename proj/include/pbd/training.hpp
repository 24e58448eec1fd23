#pragma once

#include <cmath>
#include <utility>

#include "pbd/data.hpp"
#include "pbd/model.hpp"

namespace pbd {

// Label-smoothed cross entropy, averaged over non-padding target positions.
// Fused forward/backward: the smoothed target distribution puts 1-eps on the
// gold id and eps/V on every class, so per position
//   loss = logsumexp(z) - (1-eps) * z_gold - (eps/V) * sum_v z_v.
template <typename S>
TensorT<S> cross_entropy_loss(Tape<S>* tape, const TensorT<S>& logits, const IntMatrix& targets,
                              double label_smoothing = 0.0) {
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw config_error("label_smoothing must lie in [0,1)");
  std::size_t B, m, V;
  if (logits.ndim() == 3) {
    B = logits.shape()[0];
    m = logits.shape()[1];
    V = logits.shape()[2];
  } else if (logits.ndim() == 2) {
    B = 1;
    m = logits.shape()[0];
    V = logits.shape()[1];
  } else {
    throw shape_error("cross_entropy: logits must be 2-d or 3-d, got " + shape_str(logits.shape()));
  }
  if (targets.rows != B || targets.cols != m)
    throw shape_error("cross_entropy: targets [" + std::to_string(targets.rows) + "," +
                      std::to_string(targets.cols) + "] do not match logits " +
                      shape_str(logits.shape()));

  const S* x = logits.data();
  const double eps = label_smoothing;
  std::vector<double> probs(B * m * V, 0.0);  // softmax rows, cached for backward
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::int32_t t = targets.at(b, i);
      if (t == PAD_ID) continue;
      if (t < 0 || static_cast<std::size_t>(t) >= V)
        throw index_error("cross_entropy: target id " + std::to_string(t) +
                          " outside vocabulary of size " + std::to_string(V));
      const S* row = x + (b * m + i) * V;
      double* prow = probs.data() + (b * m + i) * V;
      double maxv = row[0];
      for (std::size_t v = 1; v < V; ++v) maxv = std::max(maxv, static_cast<double>(row[v]));
      double denom = 0.0, logit_sum = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        const double e = std::exp(static_cast<double>(row[v]) - maxv);
        prow[v] = e;
        denom += e;
        logit_sum += static_cast<double>(row[v]);
      }
      for (std::size_t v = 0; v < V; ++v) prow[v] /= denom;
      const double lse = maxv + std::log(denom);
      total += lse - (1.0 - eps) * static_cast<double>(row[t]) - (eps / V) * logit_sum;
      ++count;
    }
  }
  if (count == 0) throw contract_error("cross_entropy: every target position is padding");

  TensorT<S> out = TensorT<S>::scalar(static_cast<S>(total / count));
  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    IntMatrix tg = targets;
    tape->record([logits, out, tg = std::move(tg), probs = std::move(probs), B, m, V, eps, count]() {
      const S g = out.node()->grad.empty() ? S(0) : out.node()->grad[0];
      const double scale = static_cast<double>(g) / count;
      auto& lg = logits.grad_buffer();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          const std::int32_t t = tg.at(b, i);
          if (t == PAD_ID) continue;
          const double* prow = probs.data() + (b * m + i) * V;
          S* grow = lg.data() + (b * m + i) * V;
          for (std::size_t v = 0; v < V; ++v) {
            const double q = (static_cast<std::size_t>(t) == v ? 1.0 - eps : 0.0) + eps / V;
            grow[v] += static_cast<S>(scale * (prow[v] - q));
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> cross_entropy_loss(Tape<S>* tape, const TensorT<S>& logits,
                              const std::vector<std::int32_t>& targets,
                              double label_smoothing = 0.0) {
  IntMatrix tg(1, targets.size());
  tg.v = targets;
  return cross_entropy_loss(tape, logits, tg, label_smoothing);
}

// Inverse-sqrt schedule with linear warmup:
//   lr(step) = d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
inline double lr_schedule(std::size_t d_model, std::size_t step, std::size_t warmup) {
  if (step == 0) throw contract_error("lr_schedule: steps are 1-based");
  if (warmup == 0) throw config_error("warmup must be positive");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

template <typename S>
struct AdamState {
  std::size_t t = 0;
  std::vector<std::vector<S>> m, v;  // aligned with the model's named_params order
};

template <typename S>
using NamedParams = std::vector<std::pair<std::string, TensorT<S>>>;

template <typename S>
double global_grad_norm(const NamedParams<S>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (S g : p.node()->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

// Scales all gradients so the global norm is at most clip_norm; 0 disables.
template <typename S>
void clip_gradients(NamedParams<S>& params, double clip_norm, double grad_norm) {
  if (clip_norm <= 0.0 || grad_norm <= clip_norm) return;
  const double scale = clip_norm / grad_norm;
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (S& g : p.node()->grad) g = static_cast<S>(static_cast<double>(g) * scale);
  }
}

// One bias-corrected Adam update over all parameters. Parameters without an
// allocated gradient buffer are treated as having zero gradient.
template <typename S>
void adam_step(NamedParams<S>& params, AdamState<S>& state, double lr, const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.m[k].assign(params[k].second.size(), S(0));
      state.v[k].assign(params[k].second.size(), S(0));
    }
  }
  if (state.m.size() != params.size())
    throw contract_error("adam_step: optimizer state does not match parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params[k];
    if (state.m[k].size() != p.size())
      throw contract_error("adam_step: state size mismatch for parameter '" + name + "'");
    const bool has = p.has_grad();
    const S* grad = has ? p.node()->grad.data() : nullptr;
    S* value = p.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = has ? static_cast<double>(grad[j]) : 0.0;
      if (!std::isfinite(g))
        throw training_error("non-finite gradient in parameter '" + name + "'");
      const double mj = cfg.beta1 * static_cast<double>(state.m[k][j]) + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * static_cast<double>(state.v[k][j]) + (1.0 - cfg.beta2) * g * g;
      state.m[k][j] = static_cast<S>(mj);
      state.v[k][j] = static_cast<S>(vj);
      const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      value[j] = static_cast<S>(static_cast<double>(value[j]) - update);
    }
  }
}

struct TrainOptions {
  double label_smoothing = 0.1;
  double clip_norm = 0.0;  // 0 disables clipping
  std::size_t warmup = 400;
  AdamConfig adam;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Per-step dropout stream; seeding by step keeps a resumed run on the exact
// trajectory of an uninterrupted one.
inline Rng step_rng(std::uint64_t seed, std::size_t step) {
  return Rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(step + 1)));
}

// One optimization step over a batch: per-example forward at true lengths,
// padded loss, backward, clip, Adam with the warmup schedule.
template <typename S>
StepResult train_step(TransformerModel<S>& model, const Batch& batch, const TrainOptions& opts,
                      AdamState<S>& state, Rng& dropout_rng) {
  if (batch.size() == 0) throw contract_error("train_step: empty batch");
  NamedParams<S> params = model.named_params();
  for (auto& [name, p] : params) p.clear_grad();

  Tape<S> tape;
  Forward<S> fwd{&tape, model.cfg.dropout_rate, &dropout_rng};
  auto row_ids = [](const IntMatrix& mat, std::size_t r, std::size_t len) {
    return std::vector<std::int32_t>(mat.v.begin() + r * mat.cols,
                                     mat.v.begin() + r * mat.cols + len);
  };

  std::vector<TensorT<S>> per_example;
  per_example.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto src = row_ids(batch.source_ids, b, batch.source_lengths[b]);
    const auto tin = row_ids(batch.target_input_ids, b, batch.target_lengths[b]);
    EncoderStates<S> enc = model.encode(src, fwd);
    per_example.push_back(model.decode_parallel(enc, tin, fwd));
  }
  TensorT<S> stacked = stack_rows_padded(&tape, per_example);
  TensorT<S> loss = cross_entropy_loss(&tape, stacked, batch.target_output_ids, opts.label_smoothing);
  tape.backward(loss);

  StepResult res;
  res.loss = static_cast<double>(loss.item());
  res.grad_norm = global_grad_norm(params);
  clip_gradients(params, opts.clip_norm, res.grad_norm);
  res.lr = lr_schedule(model.cfg.d_model, state.t + 1, opts.warmup);
  adam_step(params, state, res.lr, opts.adam);
  return res;
}

}  // namespace pbd
