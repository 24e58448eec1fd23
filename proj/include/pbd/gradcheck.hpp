#pragma once

#include <functional>

#include "pbd/training.hpp"

namespace pbd {

// Central finite differences against the tape gradients, parameter by
// parameter. Meant for the 64-bit instantiation; float lacks the headroom for
// h = 1e-5.
struct GradCheckOptions {
  double h = 1e-5;
  double label_smoothing = 0.1;
  std::size_t max_coords_per_param = 0;  // 0 checks every coordinate
};

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    double analytic = 0.0;  // at the worst coordinate
    double numeric = 0.0;
    std::size_t coord = 0;
  };
  std::vector<Entry> entries;
  double max_rel_err = 0.0;
  std::string worst_param;
};

// Relative error with an absolute floor: tiny pairs compare as equal, and the
// denominator never collapses below `floor_scale`.
inline double fd_rel_err(double analytic, double numeric, double floor_scale = 1e-5) {
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  if (mag < 1e-12) return 0.0;
  return std::abs(analytic - numeric) / std::max(mag, floor_scale);
}

template <class S>
GradCheckReport gradcheck_model(TransformerModel<S>& model, const Batch& batch,
                                const GradCheckOptions& opts = {},
                                const std::function<void(NamedParams<S>&)>& tamper_grads = nullptr) {
  auto forward_loss = [&](Tape<S>* tape) -> TensorT<S> {
    Forward<S> fwd{tape, 0.0, nullptr};
    auto row_ids = [](const IntMatrix& mat, std::size_t r, std::size_t len) {
      return std::vector<std::int32_t>(mat.v.begin() + r * mat.cols, mat.v.begin() + r * mat.cols + len);
    };
    std::vector<TensorT<S>> per_example;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto src = row_ids(batch.source_ids, b, batch.source_lengths[b]);
      const auto tin = row_ids(batch.target_input_ids, b, batch.target_lengths[b]);
      EncoderStates<S> enc = model.encode(src, fwd);
      per_example.push_back(model.decode_parallel(enc, tin, fwd));
    }
    TensorT<S> stacked = stack_rows_padded(tape, per_example);
    return cross_entropy_loss(tape, stacked, batch.target_output_ids, opts.label_smoothing);
  };

  NamedParams<S> params = model.named_params();
  for (auto& [name, p] : params) p.clear_grad();
  {
    Tape<S> tape;
    TensorT<S> loss = forward_loss(&tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    analytic[k].assign(params[k].second.size(), 0.0);
    if (params[k].second.has_grad())
      for (std::size_t j = 0; j < params[k].second.size(); ++j)
        analytic[k][j] = static_cast<double>(params[k].second.node()->grad[j]);
  }
  if (tamper_grads) {
    tamper_grads(params);
    for (std::size_t k = 0; k < params.size(); ++k)
      if (params[k].second.has_grad())
        for (std::size_t j = 0; j < params[k].second.size(); ++j)
          analytic[k][j] = static_cast<double>(params[k].second.node()->grad[j]);
  }

  GradCheckReport report;
  const double h = opts.h;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second;
    GradCheckReport::Entry entry;
    entry.name = params[k].first;
    const std::size_t limit = opts.max_coords_per_param == 0
                                  ? p.size()
                                  : std::min(p.size(), opts.max_coords_per_param);
    for (std::size_t j = 0; j < limit; ++j) {
      const S saved = p.data()[j];
      p.data()[j] = static_cast<S>(static_cast<double>(saved) + h);
      const double f_plus = static_cast<double>(forward_loss(nullptr).item());
      p.data()[j] = static_cast<S>(static_cast<double>(saved) - h);
      const double f_minus = static_cast<double>(forward_loss(nullptr).item());
      p.data()[j] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double rel = fd_rel_err(analytic[k][j], numeric);
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.analytic = analytic[k][j];
        entry.numeric = numeric;
        entry.coord = j;
      }
    }
    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_param = entry.name;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace pbd
