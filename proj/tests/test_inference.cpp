#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "pbd/inference.hpp"

using namespace pbd;

namespace {

ModelConfig tiny_config(std::size_t vocab) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 16;
  cfg.max_len = 12;
  cfg.dropout_rate = 0.0;
  return cfg;
}

std::vector<std::int32_t> rand_source(Rng& rng, std::size_t len, std::size_t vocab) {
  std::vector<std::int32_t> v(len);
  for (auto& x : v) x = static_cast<std::int32_t>(4 + rng.below(vocab - 4));
  v.push_back(EOS_ID);
  return v;
}

double seq_logp(const TransformerModel<double>& model, const EncoderStates<double>& enc,
                const std::vector<std::int32_t>& seq) {
  std::vector<std::int32_t> tin = {BOS_ID};
  tin.insert(tin.end(), seq.begin(), seq.end() - 1);
  auto logits = model.decode_parallel(enc, tin);
  const std::size_t v = model.cfg.vocab_size;
  double total = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::vector<double> row(v);
    for (std::size_t j = 0; j < v; ++j) row[j] = logits.data()[i * v + j];
    double mx = row[0];
    for (double x : row) mx = std::max(mx, x);
    double denom = 0;
    for (double x : row) denom += std::exp(x - mx);
    total += row[static_cast<std::size_t>(seq[i])] - (mx + std::log(denom));
  }
  return total;
}

struct OracleBest {
  std::vector<std::int32_t> ids;
  bool finished = false;
};

// Enumerates every sequence beam search could possibly return within
// max_steps and picks the best final score directly.
OracleBest beam_oracle(const TransformerModel<double>& model, const std::vector<std::int32_t>& src,
                       std::size_t max_steps, double alpha) {
  auto enc = model.encode(src);
  const std::size_t v = model.cfg.vocab_size;
  OracleBest best;
  double best_score = -std::numeric_limits<double>::infinity();

  auto consider = [&](const std::vector<std::int32_t>& seq, bool finished) {
    const double lp = seq_logp(model, enc, seq);
    const double score = lp / std::pow(static_cast<double>(std::max<std::size_t>(1, seq.size())), alpha);
    std::vector<std::int32_t> ids = seq;
    if (finished) ids.pop_back();  // drop EOS like the search does
    if (score > best_score ||
        (score == best_score && std::lexicographical_compare(seq.begin(), seq.end(),
                                                             best.ids.begin(), best.ids.end()))) {
      best_score = score;
      best.ids = std::move(ids);
      best.finished = finished;
    }
  };

  std::vector<std::int32_t> cur;
  std::function<void(std::size_t)> rec = [&](std::size_t depth) {
    if (depth < max_steps) {
      cur.push_back(EOS_ID);
      consider(cur, true);
      cur.pop_back();
    }
    if (depth == max_steps) {
      consider(cur, false);
      return;
    }
    for (std::int32_t t = 0; t < static_cast<std::int32_t>(v); ++t) {
      if (t == EOS_ID) continue;
      cur.push_back(t);
      rec(depth + 1);
      cur.pop_back();
    }
  };
  rec(0);
  return best;
}

}  // namespace

TEST_CASE("greedy matches a hand-rolled argmax loop") {
  auto cfg = tiny_config(9);
  auto model = init_model<double>(cfg, 3);
  Rng rng(4);
  auto src = rand_source(rng, 4, cfg.vocab_size);

  auto res = greedy_decode(model, src, 8);

  auto enc = model.encode(src);
  DecodeCache<double> cache;
  std::vector<std::int32_t> prefix = {BOS_ID};
  std::vector<std::int32_t> manual;
  bool truncated = true;
  for (std::size_t s = 0; s < 8; ++s) {
    auto logits = decode_step(model, enc, prefix, cache);
    std::int32_t arg = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
      if (logits.data()[j] > logits.data()[arg]) arg = static_cast<std::int32_t>(j);
    if (arg == EOS_ID) {
      truncated = false;
      break;
    }
    manual.push_back(arg);
    prefix.push_back(arg);
  }
  CHECK(res.ids == manual);
  CHECK(res.truncated == truncated);
}

TEST_CASE("greedy with a zero step budget reports truncation") {
  auto cfg = tiny_config(7);
  auto model = init_model<double>(cfg, 5);
  Rng rng(6);
  auto src = rand_source(rng, 3, cfg.vocab_size);
  auto res = greedy_decode(model, src, 0);
  CHECK(res.ids.empty());
  CHECK(res.truncated);
}

TEST_CASE("greedy respects max_len even with a huge step budget") {
  auto cfg = tiny_config(7);
  auto model = init_model<double>(cfg, 8);
  Rng rng(9);
  auto src = rand_source(rng, 3, cfg.vocab_size);
  auto res = greedy_decode(model, src, 1000);
  CHECK(res.ids.size() <= cfg.max_len - 1);
}

TEST_CASE("beam of width one is greedy") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto cfg = tiny_config(4 + 2 + seed % 5);
    auto model = init_model<double>(cfg, seed);
    Rng rng(seed * 13 + 1);
    auto src = rand_source(rng, 1 + rng.below(5), cfg.vocab_size);
    auto g = greedy_decode(model, src, 8);
    auto b = beam_search(model, src, 1, 8);
    CHECK(g.ids == b.ids);
    CHECK(g.truncated == b.truncated);
  }
}

TEST_CASE("beam wide enough to hold every path matches exhaustive search") {
  for (std::uint64_t seed : {2u, 3u, 4u, 5u, 6u}) {
    auto cfg = tiny_config(6);
    auto model = init_model<double>(cfg, seed);
    Rng rng(seed + 50);
    auto src = rand_source(rng, 3, cfg.vocab_size);
    for (double alpha : {0.0, 0.7}) {
      CAPTURE(seed);
      CAPTURE(alpha);
      // 156 possible outcomes at V=6, 3 steps; width 200 never prunes
      auto res = beam_search(model, src, 200, 3, alpha);
      auto oracle = beam_oracle(model, src, 3, alpha);
      CHECK(res.ids == oracle.ids);
      CHECK(res.truncated == !oracle.finished);
    }
  }
}

TEST_CASE("beam contracts") {
  auto cfg = tiny_config(7);
  auto model = init_model<double>(cfg, 1);
  std::vector<std::int32_t> src = {4, EOS_ID};
  CHECK_THROWS_AS(beam_search(model, src, 0, 4), config_error);
}

TEST_CASE("greedy output is consistent with the parallel teacher-forced pass") {
  auto cfg = tiny_config(9);
  auto model = init_model<double>(cfg, 31);
  Rng rng(32);
  auto src = rand_source(rng, 4, cfg.vocab_size);
  auto res = greedy_decode(model, src, 6);

  std::vector<std::int32_t> tin = {BOS_ID};
  tin.insert(tin.end(), res.ids.begin(), res.ids.end());
  auto logits = model.decode_parallel(model.encode(src), tin);
  const std::size_t v = cfg.vocab_size;
  for (std::size_t i = 0; i < tin.size(); ++i) {
    std::int32_t arg = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (logits.data()[i * v + j] > logits.data()[i * v + arg]) arg = static_cast<std::int32_t>(j);
    if (i < res.ids.size()) {
      CHECK(arg == res.ids[i]);
    } else if (!res.truncated) {
      CHECK(arg == EOS_ID);  // the step that ended decoding
    }
  }
}

TEST_CASE("levenshtein distance") {
  CHECK(levenshtein("abc", "abc") == 0);
  CHECK(levenshtein("abc", "abd") == 1);
  CHECK(levenshtein("", "abc") == 3);
  CHECK(levenshtein("abc", "") == 3);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("ab", "ba") == 2);  // plain edit distance: a swap is two edits
  // codepoints, not bytes
  CHECK(levenshtein("\xc3\xa9", "e") == 1);
}

TEST_CASE("exact match and character error rate") {
  std::vector<std::string> preds = {"hello", "wrld", "abc"};
  std::vector<std::string> refs = {"hello", "world", "abc"};
  CHECK(exact_match(preds, refs) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  // 1 edit over 5+5+3 reference characters
  CHECK(char_error_rate(preds, refs) == doctest::Approx(1.0 / 13.0).epsilon(1e-12));

  std::vector<std::string> short_refs = {"a"};
  CHECK_THROWS_AS(exact_match(preds, short_refs), contract_error);
  CHECK_THROWS_AS(char_error_rate(preds, short_refs), contract_error);
  std::vector<std::string> none;
  CHECK_THROWS_AS(exact_match(none, none), contract_error);
  std::vector<std::string> empty_ref = {""};
  std::vector<std::string> pred1 = {"a"};
  CHECK_THROWS_AS(char_error_rate(pred1, empty_ref), contract_error);
}
