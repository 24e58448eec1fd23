#include <algorithm>
#include <cstring>
#include <map>
#include <vector>

#include "doctest.h"
#include "pbd/decode.hpp"
#include "pbd/training.hpp"
#include "reference_transformer.hpp"

using namespace pbd;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 16;
  cfg.max_len = 16;
  cfg.dropout_rate = 0.0;
  return cfg;
}

std::vector<std::int32_t> rand_ids(Rng& rng, std::size_t len, std::size_t vocab) {
  std::vector<std::int32_t> v(len);
  for (auto& x : v) x = static_cast<std::int32_t>(4 + rng.below(vocab - 4));
  return v;
}

// worst |parallel - incremental| logit difference over a teacher-forced pass
template <class S>
double step_vs_parallel(const ModelConfig& cfg, std::uint64_t seed) {
  auto model = init_model<S>(cfg, seed);
  Rng rng(seed * 7 + 1);
  auto src = rand_ids(rng, 1 + rng.below(5), cfg.vocab_size);
  src.push_back(EOS_ID);
  std::vector<std::int32_t> tin = {BOS_ID};
  auto chars = rand_ids(rng, 1 + rng.below(5), cfg.vocab_size);
  tin.insert(tin.end(), chars.begin(), chars.end());

  auto enc = model.encode(src);
  auto logits = model.decode_parallel(enc, tin);
  DecodeCache<S> cache;
  double worst = 0.0;
  const std::size_t v = cfg.vocab_size;
  for (std::size_t t = 1; t <= tin.size(); ++t) {
    auto step = decode_step(model, enc, std::span<const std::int32_t>(tin.data(), t), cache);
    for (std::size_t j = 0; j < v; ++j)
      worst = std::max(worst, std::abs(static_cast<double>(logits.data()[(t - 1) * v + j]) -
                                       static_cast<double>(step.data()[j])));
  }
  return worst;
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  auto cfg = small_config();
  auto a = init_model<double>(cfg, 42);
  auto b = init_model<double>(cfg, 42);
  auto c = init_model<double>(cfg, 43);
  auto pa = a.named_params(), pb = b.named_params(), pc = c.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    REQUIRE(pa[i].second.size() == pb[i].second.size());
    for (std::size_t j = 0; j < pa[i].second.size(); ++j)
      CHECK(pa[i].second.data()[j] == pb[i].second.data()[j]);
  }
  bool any_diff = false;
  for (std::size_t j = 0; j < a.tok_emb.size() && !any_diff; ++j)
    any_diff = a.tok_emb.data()[j] != c.tok_emb.data()[j];
  CHECK(any_diff);
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  cfg.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = small_config();
  cfg.vocab_size = 4;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = small_config();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = small_config();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("encode shapes and contracts") {
  auto cfg = small_config();
  auto model = init_model<double>(cfg, 1);
  std::vector<std::int32_t> src = {4, 5, 6, EOS_ID};
  auto enc = model.encode(src);
  REQUIRE(enc.states.size() == cfg.n_layers + 1);
  for (const auto& s : enc.states) {
    REQUIRE(s.shape() == std::vector<std::size_t>{4, cfg.d_model});
  }
  CHECK(enc.source_len() == 4);
  CHECK(enc.top().same_storage(enc.states.back()));

  CHECK_THROWS_AS(model.encode(std::vector<std::int32_t>{}), contract_error);
  std::vector<std::int32_t> long_src(cfg.max_len + 1, 4);
  CHECK_THROWS_AS(model.encode(long_src), length_error);
}

TEST_CASE("decode_parallel contracts") {
  auto cfg = small_config();
  auto model = init_model<double>(cfg, 1);
  std::vector<std::int32_t> src = {4, 5, EOS_ID};
  auto enc = model.encode(src);
  std::vector<std::int32_t> no_bos = {4, 5};
  CHECK_THROWS_AS(model.decode_parallel(enc, no_bos), contract_error);
  std::vector<std::int32_t> long_tgt(cfg.max_len + 1, 4);
  long_tgt[0] = BOS_ID;
  CHECK_THROWS_AS(model.decode_parallel(enc, long_tgt), length_error);
  EncoderStates<double> shallow;
  shallow.states = {enc.states[0]};
  std::vector<std::int32_t> tin = {BOS_ID, 4};
  CHECK_THROWS_AS(model.decode_parallel(shallow, tin), contract_error);
}

TEST_CASE("baseline configuration reproduces the plain reference transformer") {
  auto cfg = small_config();
  cfg.vocab_size = 13;
  cfg.d_model = 16;
  cfg.d_ff = 24;
  cfg.use_pbd = false;
  cfg.use_segment = false;
  cfg.share_params = false;
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    auto model = init_model<double>(cfg, seed);
    Rng rng(seed + 100);
    auto src = rand_ids(rng, 4, cfg.vocab_size);
    src.push_back(EOS_ID);
    std::vector<std::int32_t> tin = {BOS_ID};
    auto chars = rand_ids(rng, 4, cfg.vocab_size);
    tin.insert(tin.end(), chars.begin(), chars.end());

    auto enc = model.encode(src);
    auto logits = model.decode_parallel(enc, tin);
    auto ref = refmodel::plain_logits(model, src, tin);
    double worst = 0.0;
    for (std::size_t i = 0; i < tin.size(); ++i)
      for (std::size_t j = 0; j < cfg.vocab_size; ++j)
        worst = std::max(worst, std::abs(logits.data()[i * cfg.vocab_size + j] - ref[i][j]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("future target tokens cannot reach past logits") {
  auto cfg = small_config();  // pbd + segment + sharing all on
  auto model = init_model<double>(cfg, 17);
  std::vector<std::int32_t> src = {4, 5, 6, 7, EOS_ID};
  std::vector<std::int32_t> tin = {BOS_ID, 4, 5, 6, 7, 8};
  auto enc = model.encode(src);
  auto base = model.decode_parallel(enc, tin);
  const std::size_t v = cfg.vocab_size;
  for (std::size_t p = 1; p < tin.size(); ++p) {
    auto tampered = tin;
    tampered[p] = tampered[p] == 8 ? 9 : 8;
    auto logits = model.decode_parallel(enc, tampered);
    // rows before p are bit-identical; the masked softmax gives disallowed
    // keys exactly zero weight, so this is equality, not approximation
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < v; ++j)
        CHECK(logits.data()[i * v + j] == base.data()[i * v + j]);
    bool row_p_changed = false;
    for (std::size_t j = 0; j < v && !row_p_changed; ++j)
      row_p_changed = logits.data()[p * v + j] != base.data()[p * v + j];
    CHECK(row_p_changed);
  }
}

TEST_CASE("zeroed segment table equals the unmarked model bit for bit") {
  auto cfg = small_config();
  cfg.use_segment = true;
  auto marked = init_model<double>(cfg, 23);
  cfg.use_segment = false;
  auto plain = init_model<double>(cfg, 23);  // same rng stream: tables always drawn
  std::fill(marked.seg_tables[0].data(), marked.seg_tables[0].data() + marked.seg_tables[0].size(),
            0.0);

  std::vector<std::int32_t> src = {4, 5, 6, EOS_ID};
  std::vector<std::int32_t> tin = {BOS_ID, 7, 8};
  auto la = marked.decode_parallel(marked.encode(src), tin);
  auto lb = plain.decode_parallel(plain.encode(src), tin);
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la.data()[i] == lb.data()[i]);
}

TEST_CASE("incremental decoding matches the parallel pass") {
  auto base = small_config();

  SUBCASE("64-bit across the flag matrix") {
    auto cfg = base;
    CHECK(step_vs_parallel<double>(cfg, 1) < 1e-10);
    cfg = base;
    cfg.use_pbd = false;
    cfg.use_segment = false;
    CHECK(step_vs_parallel<double>(cfg, 2) < 1e-10);
    cfg = base;
    cfg.copy_from_layer_output = true;
    CHECK(step_vs_parallel<double>(cfg, 3) < 1e-10);
    cfg = base;
    cfg.segment_per_layer = true;
    CHECK(step_vs_parallel<double>(cfg, 4) < 1e-10);
    cfg = base;
    cfg.share_params = false;
    cfg.use_segment = false;
    CHECK(step_vs_parallel<double>(cfg, 5) < 1e-10);
    cfg = base;
    cfg.gelu_ff = true;
    cfg.learned_positions = false;
    CHECK(step_vs_parallel<double>(cfg, 6) < 1e-10);
    cfg = base;
    cfg.tie_output_embedding = false;
    CHECK(step_vs_parallel<double>(cfg, 7) < 1e-10);
  }

  SUBCASE("32-bit") {
    auto cfg = base;
    CHECK(step_vs_parallel<float>(cfg, 11) < 1e-5);
    cfg.use_pbd = false;
    CHECK(step_vs_parallel<float>(cfg, 12) < 1e-5);
  }
}

TEST_CASE("decode_step contracts") {
  auto cfg = small_config();
  auto model = init_model<double>(cfg, 2);
  std::vector<std::int32_t> src = {4, EOS_ID};
  auto enc = model.encode(src);
  DecodeCache<double> cache;
  std::vector<std::int32_t> no_bos = {4};
  CHECK_THROWS_AS(decode_step(model, enc, no_bos, cache), contract_error);
  std::vector<std::int32_t> bos = {BOS_ID};
  decode_step(model, enc, bos, cache);
  std::vector<std::int32_t> skip = {BOS_ID, 4, 5};  // t jumps from 1 to 3
  CHECK_THROWS_AS(decode_step(model, enc, skip, cache), contract_error);
}

TEST_CASE("count_params agrees with enumerating every stored value") {
  auto check_cfg = [](ModelConfig cfg) {
    cfg.validate();
    auto model = init_model<double>(cfg, 3);
    std::size_t enumerated = 0;
    for (const auto& [name, p] : model.named_params()) enumerated += p.size();
    if (!cfg.learned_positions) {
      CHECK_FALSE(model.pos_emb.requires_grad());  // constant table, not a parameter
    }
    CHECK(count_params(cfg).total == enumerated);
  };
  auto cfg = small_config();
  check_cfg(cfg);
  cfg.share_params = false;
  check_cfg(cfg);
  cfg = small_config();
  cfg.tie_output_embedding = false;
  check_cfg(cfg);
  cfg = small_config();
  cfg.learned_positions = false;
  check_cfg(cfg);
  cfg = small_config();
  cfg.segment_per_layer = true;
  cfg.n_layers = 3;
  check_cfg(cfg);
}

TEST_CASE("parameter sharing removes exactly one trunk per layer") {
  ModelConfig cfg;  // the default 6-layer setup
  cfg.vocab_size = 30;
  cfg.n_layers = 6;
  ModelConfig unshared = cfg;
  unshared.share_params = false;
  const std::size_t with = count_params(cfg).total;
  const std::size_t without = count_params(unshared).total;
  CHECK(static_cast<double>(with) / static_cast<double>(without) < 0.75);
  CHECK(without - with == cfg.n_layers * shared_trunk_params_per_layer(cfg));
}

TEST_CASE("shared trunks stay aliased through a training step") {
  auto cfg = small_config();
  auto model = init_model<double>(cfg, 31);
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    REQUIRE(model.enc_layers[l].self_attn.wq.same_storage(model.dec_layers[l].self_attn.wq));

  Batch batch;
  batch.source_ids = IntMatrix(1, 3);
  batch.source_ids.v = {4, 5, EOS_ID};
  batch.target_input_ids = IntMatrix(1, 3);
  batch.target_input_ids.v = {BOS_ID, 4, 5};
  batch.target_output_ids = IntMatrix(1, 3);
  batch.target_output_ids.v = {4, 5, EOS_ID};
  batch.source_lengths = {3};
  batch.target_lengths = {3};

  AdamState<double> state;
  Rng drop(1);
  TrainOptions opts;
  auto res = train_step(model, batch, opts, state, drop);
  CHECK(std::isfinite(res.loss));
  CHECK(res.grad_norm > 0.0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    CHECK(model.enc_layers[l].self_attn.wq.same_storage(model.dec_layers[l].self_attn.wq));
    CHECK(model.enc_layers[l].ffn_w1.same_storage(model.dec_layers[l].ffn_w1));
    CHECK(model.enc_layers[l].norm1_gain.same_storage(model.dec_layers[l].norm1_gain));
  }
}

TEST_CASE("shared gradients are the sum of the unshared twins") {
  auto cfg = small_config();
  cfg.share_params = true;
  auto shared = init_model<double>(cfg, 37);
  auto cfg_u = cfg;
  cfg_u.share_params = false;
  auto twin = init_model<double>(cfg_u, 99);  // weights overwritten below

  std::map<std::string, TensorT<double>> tm;
  for (auto& [name, p] : twin.named_params()) tm.emplace(name, p);
  for (const auto& [name, p] : shared.named_params()) {
    auto copy_into = [&](const std::string& dst) {
      auto it = tm.find(dst);
      REQUIRE(it != tm.end());
      REQUIRE(it->second.size() == p.size());
      std::copy(p.data(), p.data() + p.size(), it->second.data());
    };
    copy_into(name);
    if (name.rfind("enc.", 0) == 0) copy_into("dec." + name.substr(4));
  }

  std::vector<std::int32_t> src = {4, 5, 6, EOS_ID};
  std::vector<std::int32_t> tin = {BOS_ID, 7, 8};
  std::vector<std::int32_t> tout = {7, 8, EOS_ID};

  auto loss_and_grads = [&](TransformerModel<double>& m) {
    Tape<double> tape;
    Forward<double> fwd{&tape, 0.0, nullptr};
    for (auto& [n, p] : m.named_params()) p.clear_grad();
    auto logits = m.decode_parallel(m.encode(src, fwd), tin, fwd);
    auto loss = cross_entropy_loss(&tape, logits, tout, 0.1);
    tape.backward(loss);
    return loss.item();
  };

  const double ls = loss_and_grads(shared);
  const double lu = loss_and_grads(twin);
  CHECK(ls == doctest::Approx(lu).epsilon(1e-12));

  for (const auto& [name, p] : shared.named_params()) {
    if (name.rfind("enc.", 0) != 0) continue;
    const auto& enc_twin = tm.at(name);
    const auto& dec_twin = tm.at("dec." + name.substr(4));
    auto gs = p.grad_or_zeros();
    auto ge = enc_twin.grad_or_zeros();
    auto gd = dec_twin.grad_or_zeros();
    for (std::size_t j = 0; j < gs.size(); ++j) {
      const double expect = ge[j] + gd[j];
      const double mag = std::max(std::abs(gs[j]), std::abs(expect));
      CHECK(std::abs(gs[j] - expect) <= 1e-10 * std::max(mag, 1e-6));
    }
  }
}

TEST_CASE("masked-out source positions are invisible to the decoder") {
  auto cfg = small_config();
  cfg.n_layers = 1;  // the only copy source is the raw embedding state
  auto model = init_model<double>(cfg, 21);
  // cut the cross-attention route so the copy path is the decoder's only view
  // of the source
  auto& wo = model.cross_layers[0].cross_attn.wo;
  std::fill(wo.data(), wo.data() + wo.size(), 0.0);

  std::vector<std::int32_t> src = {4, 5, 6, 7, EOS_ID};
  std::vector<std::int32_t> tin = {BOS_ID, 8, 9, 4};
  auto enc = model.encode(src);
  auto base = model.decode_parallel(enc, tin);
  const std::size_t v = cfg.vocab_size;

  for (std::size_t j = 0; j < src.size() - 1; ++j) {
    auto tampered = src;
    tampered[j] = tampered[j] == 9 ? 8 : 9;
    auto logits = model.decode_parallel(model.encode(tampered), tin);
    // the pseudo-future of query i is source positions > i, so source
    // position j is visible only to queries before j
    for (std::size_t i = j; i < tin.size(); ++i)
      for (std::size_t c = 0; c < v; ++c)
        CHECK(logits.data()[i * v + c] == base.data()[i * v + c]);
    if (j > 0) {
      bool earlier_changed = false;
      for (std::size_t i = 0; i < std::min(j, tin.size()) && !earlier_changed; ++i)
        for (std::size_t c = 0; c < v && !earlier_changed; ++c)
          earlier_changed = logits.data()[i * v + c] != base.data()[i * v + c];
      CHECK(earlier_changed);
    }
  }
}

TEST_CASE("copy_from_layer_output switches the copied depth") {
  auto cfg = small_config();
  cfg.n_layers = 1;
  std::vector<std::int32_t> src = {4, 5, 6, EOS_ID};
  std::vector<std::int32_t> tampered = {9, 5, 6, EOS_ID};
  std::vector<std::int32_t> tin = {BOS_ID, 7, 8};

  auto run = [&](bool from_output, const std::vector<std::int32_t>& s) {
    cfg.copy_from_layer_output = from_output;
    auto model = init_model<double>(cfg, 57);
    auto& wo = model.cross_layers[0].cross_attn.wo;
    std::fill(wo.data(), wo.data() + wo.size(), 0.0);
    return model.decode_parallel(model.encode(s), tin);
  };

  // copying layer inputs: position 0 is invisible to every query
  auto a0 = run(false, src), a1 = run(false, tampered);
  for (std::size_t i = 0; i < a0.size(); ++i) CHECK(a0.data()[i] == a1.data()[i]);

  // copying layer outputs: encoder self-attention has already mixed position 0
  // into every row
  auto b0 = run(true, src), b1 = run(true, tampered);
  bool changed = false;
  for (std::size_t i = 0; i < b0.size() && !changed; ++i) changed = b0.data()[i] != b1.data()[i];
  CHECK(changed);
}

TEST_CASE("segment_per_layer allocates one table per decoder layer") {
  auto cfg = small_config();
  cfg.segment_per_layer = true;
  auto model = init_model<double>(cfg, 61);
  REQUIRE(model.seg_tables.size() == cfg.n_layers);
  CHECK_FALSE(model.seg_tables[0].same_storage(model.seg_tables[1]));
  CHECK_FALSE(model.seg_table(0).same_storage(model.seg_table(1)));

  cfg.segment_per_layer = false;
  auto single = init_model<double>(cfg, 61);
  REQUIRE(single.seg_tables.size() == 1);
  CHECK(single.seg_table(0).same_storage(single.seg_table(1)));
}
