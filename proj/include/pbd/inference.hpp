#pragma once

#include <algorithm>

#include "pbd/decode.hpp"

namespace pbd {

struct DecodeResult {
  std::vector<std::int32_t> ids;  // generated ids, EOS not included
  bool truncated = false;         // ran out of steps before EOS
};

namespace detail {

template <class S>
std::vector<double> log_softmax_d(const TensorT<S>& logits) {
  const std::size_t n = logits.size();
  std::vector<double> lp(n);
  double maxv = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) maxv = std::max(maxv, static_cast<double>(logits.data()[i]));
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) denom += std::exp(static_cast<double>(logits.data()[i]) - maxv);
  const double lse = maxv + std::log(denom);
  for (std::size_t i = 0; i < n; ++i) lp[i] = static_cast<double>(logits.data()[i]) - lse;
  return lp;
}

template <class S>
std::int32_t argmax_lowest(const TensorT<S>& logits) {
  std::int32_t best = 0;
  for (std::size_t v = 1; v < logits.size(); ++v)
    if (logits.data()[v] > logits.data()[best]) best = static_cast<std::int32_t>(v);
  return best;
}

}  // namespace detail

// Greedy decoding via the incremental cache; argmax ties resolve to the
// lowest token id.
template <class S>
DecodeResult greedy_decode(const TransformerModel<S>& model, std::span<const std::int32_t> source_ids,
                           std::size_t max_steps) {
  EncoderStates<S> enc = model.encode(source_ids);
  DecodeCache<S> cache;
  std::vector<std::int32_t> prefix{BOS_ID};
  const std::size_t steps = std::min(max_steps, model.cfg.max_len - 1);
  DecodeResult res;
  for (std::size_t s = 0; s < steps; ++s) {
    const TensorT<S> logits = decode_step(model, enc, prefix, cache);
    const std::int32_t best = detail::argmax_lowest(logits);
    if (best == EOS_ID) return res;
    res.ids.push_back(best);
    prefix.push_back(best);
  }
  res.truncated = true;
  return res;
}

// Beam search with length-normalized final scoring:
//   score(h) = logp(h) / len(h)^alpha
// where len counts generated tokens including EOS. Candidate expansion is
// ranked by raw log-probability with (parent index, token id) as a
// deterministic tiebreak; the final pick breaks score ties toward the
// lexicographically smallest id sequence. beam_size 1 matches greedy_decode.
template <class S>
DecodeResult beam_search(const TransformerModel<S>& model, std::span<const std::int32_t> source_ids,
                         std::size_t beam_size, std::size_t max_steps, double length_alpha = 0.0) {
  if (beam_size == 0) throw config_error("beam_size must be positive");
  EncoderStates<S> enc = model.encode(source_ids);
  const std::size_t steps = std::min(max_steps, model.cfg.max_len - 1);

  struct Hyp {
    std::vector<std::int32_t> ids;  // generated; includes EOS once finished
    double logp = 0.0;
    bool finished = false;
    DecodeCache<S> cache;
  };
  std::vector<Hyp> beams(1);

  struct Cand {
    double logp;
    std::size_t parent;
    std::int32_t token;  // -1 marks a finished hypothesis carried over
  };

  for (std::size_t s = 0; s < steps; ++s) {
    if (std::all_of(beams.begin(), beams.end(), [](const Hyp& h) { return h.finished; })) break;
    std::vector<Cand> cands;
    for (std::size_t p = 0; p < beams.size(); ++p) {
      if (beams[p].finished) {
        cands.push_back({beams[p].logp, p, -1});
        continue;
      }
      std::vector<std::int32_t> prefix;
      prefix.reserve(beams[p].ids.size() + 1);
      prefix.push_back(BOS_ID);
      prefix.insert(prefix.end(), beams[p].ids.begin(), beams[p].ids.end());
      const TensorT<S> logits = decode_step(model, enc, prefix, beams[p].cache);
      const std::vector<double> lp = detail::log_softmax_d(logits);
      for (std::size_t v = 0; v < lp.size(); ++v)
        cands.push_back({beams[p].logp + lp[v], p, static_cast<std::int32_t>(v)});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<Hyp> next;
    for (const Cand& c : cands) {
      if (next.size() == beam_size) break;
      if (c.token < 0) {
        next.push_back(beams[c.parent]);
        continue;
      }
      Hyp h;
      h.ids = beams[c.parent].ids;
      h.ids.push_back(c.token);
      h.logp = c.logp;
      h.finished = (c.token == EOS_ID);
      h.cache = beams[c.parent].cache;
      next.push_back(std::move(h));
    }
    beams = std::move(next);
  }

  const Hyp* best = nullptr;
  double best_score = 0.0;
  for (const Hyp& h : beams) {
    const std::size_t len = std::max<std::size_t>(1, h.ids.size());
    const double score = h.logp / std::pow(static_cast<double>(len), length_alpha);
    if (!best || score > best_score ||
        (score == best_score &&
         std::lexicographical_compare(h.ids.begin(), h.ids.end(), best->ids.begin(), best->ids.end()))) {
      best = &h;
      best_score = score;
    }
  }
  DecodeResult res;
  res.ids = best->ids;
  if (best->finished) {
    res.ids.pop_back();  // drop the EOS
  } else {
    res.truncated = true;
  }
  return res;
}

// Corpus metrics over decoded strings.
double exact_match(const std::vector<std::string>& predictions, const std::vector<std::string>& references);
double char_error_rate(const std::vector<std::string>& predictions, const std::vector<std::string>& references);
std::size_t levenshtein(const std::string& a, const std::string& b);  // over codepoints

}  // namespace pbd
