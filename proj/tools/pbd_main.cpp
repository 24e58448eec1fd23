#include <filesystem>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "pbd/checkpoint.hpp"
#include "pbd/gradcheck.hpp"
#include "pbd/inference.hpp"
#include "pbd/runconfig.hpp"

using namespace pbd;

namespace {

int exit_code_for(const pbd::error& e) {
  return (e.category() == "config" || e.category() == "data") ? 2 : 1;
}

// ---------------------------------------------------------------- train

template <class S>
int run_train(const RunConfig& rc, bool resume) {
  if (rc.train_tsv.empty()) throw config_error("train_tsv is required");
  const std::vector<Example> examples = load_tsv(rc.train_tsv);
  if (examples.empty()) throw data_error(rc.train_tsv + " has no examples");
  const Vocab vocab =
      rc.alphabet.empty() ? build_vocab(examples) : build_vocab_from_alphabet(rc.alphabet);

  ModelConfig mc = rc.model;
  mc.vocab_size = vocab.size();
  mc.validate();

  TransformerModel<S> model;
  AdamState<S> state;
  if (resume) {
    if (rc.checkpoint_path.empty()) throw config_error("resume requires checkpoint_path");
    LoadedCheckpoint<S> lc = load_checkpoint<S>(rc.checkpoint_path, mc);
    if (!lc.has_optimizer) throw config_error("checkpoint has no optimizer state to resume from");
    if (lc.alphabet != vocab.alphabet_utf8())
      throw config_error("checkpoint alphabet does not match the training data");
    model = std::move(lc.model);
    state = std::move(lc.opt);
  } else {
    model = init_model<S>(mc, rc.init_seed);
  }

  TrainOptions opts;
  opts.label_smoothing = rc.label_smoothing;
  opts.clip_norm = rc.clip_norm;
  opts.warmup = rc.warmup;
  opts.adam = {rc.beta1, rc.beta2, rc.adam_eps};

  const auto ensure_parent = [](const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
  };
  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!rc.log_path.empty()) {
    ensure_parent(rc.log_path);
    log_file.open(rc.log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw data_error("cannot open log " + rc.log_path);
    log = &log_file;
  }
  if (!rc.checkpoint_path.empty()) ensure_parent(rc.checkpoint_path);

  // Epoch e reshuffles with data_seed + e, so a resumed run replays the exact
  // batch stream of an uninterrupted one.
  const std::size_t per_epoch = (examples.size() + rc.batch_size - 1) / rc.batch_size;
  std::vector<Batch> batches;
  std::size_t cur_epoch = static_cast<std::size_t>(-1);
  for (std::size_t s = state.t; s < rc.steps; ++s) {
    if (s / per_epoch != cur_epoch) {
      cur_epoch = s / per_epoch;
      batches = make_batches(examples, vocab, rc.batch_size, mc.max_len, rc.data_seed + cur_epoch);
    }
    Rng drng = step_rng(rc.init_seed, s);
    const StepResult r = train_step(model, batches[s % per_epoch], opts, state, drng);
    (*log) << (s + 1) << '\t' << std::fixed << std::setprecision(6) << r.loss << '\t'
           << std::setprecision(8) << std::defaultfloat << r.lr << '\n';
    if (!rc.checkpoint_path.empty() && rc.checkpoint_interval != 0 &&
        (s + 1) % rc.checkpoint_interval == 0 && s + 1 < rc.steps)
      save_checkpoint(rc.checkpoint_path, model, vocab.alphabet_utf8(), &state);
  }
  if (!rc.checkpoint_path.empty())
    save_checkpoint(rc.checkpoint_path, model, vocab.alphabet_utf8(), &state);
  return 0;
}

// ----------------------------------------------------------- eval/decode

struct DecodeFlags {
  std::size_t beam = 1;
  double alpha = 0.0;
  std::size_t max_steps = 0;  // 0: max_len - 1
};

template <class S>
std::string decode_one(const TransformerModel<S>& model, const Vocab& vocab,
                       const std::string& text, const DecodeFlags& f) {
  std::vector<std::int32_t> src = encode_text(vocab, text);
  src.push_back(EOS_ID);
  const std::size_t steps = f.max_steps ? f.max_steps : model.cfg.max_len - 1;
  const DecodeResult r = f.beam <= 1 ? greedy_decode(model, src, steps)
                                     : beam_search(model, src, f.beam, steps, f.alpha);
  return decode_text(vocab, r.ids);
}

template <class S>
int run_eval(const std::string& ckpt, const std::string& data, const DecodeFlags& f,
             std::size_t limit) {
  const LoadedCheckpoint<S> lc = load_checkpoint<S>(ckpt);
  const Vocab vocab = build_vocab_from_alphabet(lc.alphabet);
  std::vector<Example> examples = load_tsv(data);
  if (examples.empty()) throw data_error(data + " has no examples");
  if (limit != 0 && examples.size() > limit) examples.resize(limit);
  std::vector<std::string> preds, refs;
  preds.reserve(examples.size());
  for (const Example& ex : examples) {
    preds.push_back(decode_one(lc.model, vocab, ex.source, f));
    refs.push_back(ex.target);
  }
  std::cout << "examples\t" << preds.size() << '\n'
            << std::fixed << std::setprecision(6)  //
            << "exact_match\t" << exact_match(preds, refs) << '\n'
            << "char_error_rate\t" << char_error_rate(preds, refs) << '\n';
  return 0;
}

template <class S>
int run_decode(const std::string& ckpt, const std::vector<std::string>& inputs,
               const DecodeFlags& f) {
  const LoadedCheckpoint<S> lc = load_checkpoint<S>(ckpt);
  const Vocab vocab = build_vocab_from_alphabet(lc.alphabet);
  for (const std::string& text : inputs) std::cout << decode_one(lc.model, vocab, text, f) << '\n';
  return 0;
}

// ----------------------------------------------------------------- synth

int run_synth(const std::string& out_dir, std::size_t n_train, std::size_t n_eval,
              std::uint64_t seed, const CorruptionConfig& cc) {
  cc.validate();
  const std::vector<std::string>& words = builtin_words();
  Rng rng(seed);
  auto draw = [&]() {
    const std::string& w = words[rng.below(words.size())];
    std::string noisy = corrupt_word(w, cc, rng);
    while (noisy.empty()) noisy = corrupt_word(w, cc, rng);  // keep sources non-empty
    return Example{noisy, w};
  };
  std::vector<Example> train(n_train), eval(n_eval);
  for (auto& ex : train) ex = draw();
  for (auto& ex : eval) ex = draw();
  std::filesystem::create_directories(out_dir);
  const std::string train_path = out_dir + "/train.tsv";
  const std::string eval_path = out_dir + "/eval.tsv";
  write_tsv(train_path, train);
  write_tsv(eval_path, eval);
  std::cout << "wrote " << n_train << " pairs to " << train_path << '\n'
            << "wrote " << n_eval << " pairs to " << eval_path << '\n';
  return 0;
}

// ------------------------------------------------------------- gradcheck

int run_gradcheck(std::size_t vocab, std::size_t d_model, std::size_t heads, std::size_t layers,
                  std::size_t d_ff, std::size_t src_len, std::size_t tgt_len, std::uint64_t seed,
                  double h, double tol) {
  ModelConfig mc;
  mc.vocab_size = vocab;
  mc.d_model = d_model;
  mc.n_heads = heads;
  mc.n_layers = layers;
  mc.d_ff = d_ff;
  mc.max_len = std::max(src_len, tgt_len) + 1;
  mc.dropout_rate = 0.0;
  mc.validate();
  TransformerModel<double> model = init_model<double>(mc, seed);

  Rng rng(seed + 1);
  Batch batch;
  batch.source_ids = IntMatrix(1, src_len);
  batch.target_input_ids = IntMatrix(1, tgt_len);
  batch.target_output_ids = IntMatrix(1, tgt_len);
  auto draw_char = [&]() { return static_cast<std::int32_t>(4 + rng.below(vocab - 4)); };
  for (std::size_t i = 0; i + 1 < src_len; ++i) batch.source_ids.at(0, i) = draw_char();
  batch.source_ids.at(0, src_len - 1) = EOS_ID;
  batch.target_input_ids.at(0, 0) = BOS_ID;
  for (std::size_t i = 0; i + 1 < tgt_len; ++i) {
    const std::int32_t c = draw_char();
    batch.target_input_ids.at(0, i + 1) = c;
    batch.target_output_ids.at(0, i) = c;
  }
  batch.target_output_ids.at(0, tgt_len - 1) = EOS_ID;
  batch.source_lengths = {src_len};
  batch.target_lengths = {tgt_len};

  GradCheckOptions opts;
  opts.h = h;
  const GradCheckReport report = gradcheck_model(model, batch, opts);
  for (const auto& e : report.entries)
    std::cout << e.name << '\t' << std::scientific << std::setprecision(3) << e.max_rel_err << '\n';
  std::cout << "max\t" << std::scientific << std::setprecision(3) << report.max_rel_err << '\t'
            << report.worst_param << '\n';
  if (report.max_rel_err < tol) {
    std::cout << "gradcheck passed (tolerance " << tol << ")\n";
    return 0;
  }
  std::cout << "gradcheck FAILED (tolerance " << tol << ")\n";
  return 1;
}

// ------------------------------------------------------------------ mask

int run_mask(std::size_t src_len, std::size_t tgt_len, const std::string& mode) {
  AttentionMask mask;
  if (mode == "pbd") {
    mask = build_pbd_mask(src_len, tgt_len);
  } else if (mode == "causal") {
    mask = build_causal_mask(tgt_len);
  } else {
    throw config_error("mask mode must be 'pbd' or 'causal'");
  }
  std::cout << format_mask(mask);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transformer sequence transduction with pseudo-bidirectional decoding"};
  app.require_subcommand(1);
  std::function<int()> action;

  // train
  auto* train = app.add_subcommand("train", "train a model from a JSON run config");
  std::string train_config;
  bool train_resume = false;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_flag("--resume", train_resume, "continue from checkpoint_path");
  train->callback([&] {
    action = [&]() {
      const RunConfig rc = load_run_config(train_config);
      return rc.precision == "f64" ? run_train<double>(rc, train_resume)
                                   : run_train<float>(rc, train_resume);
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "decode a TSV corpus and report metrics");
  std::string eval_ckpt, eval_data;
  DecodeFlags eval_flags;
  std::size_t eval_limit = 0;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "TSV corpus")->required();
  eval->add_option("--beam", eval_flags.beam, "beam size (1 = greedy)");
  eval->add_option("--alpha", eval_flags.alpha, "length normalization exponent");
  eval->add_option("--max-steps", eval_flags.max_steps, "decode step limit");
  eval->add_option("--limit", eval_limit, "evaluate only the first N examples");
  eval->callback([&] {
    action = [&]() {
      const std::string dtype = read_checkpoint_config(eval_ckpt).value("dtype", "f32");
      return dtype == "f64" ? run_eval<double>(eval_ckpt, eval_data, eval_flags, eval_limit)
                            : run_eval<float>(eval_ckpt, eval_data, eval_flags, eval_limit);
    };
  });

  // decode
  auto* dec = app.add_subcommand("decode", "decode raw inputs");
  std::string dec_ckpt, dec_input, dec_file;
  DecodeFlags dec_flags;
  dec->add_option("--ckpt", dec_ckpt, "checkpoint path")->required();
  dec->add_option("--input", dec_input, "single input string");
  dec->add_option("--input-file", dec_file, "file with one input per line");
  dec->add_option("--beam", dec_flags.beam, "beam size (1 = greedy)");
  dec->add_option("--alpha", dec_flags.alpha, "length normalization exponent");
  dec->add_option("--max-steps", dec_flags.max_steps, "decode step limit");
  dec->callback([&] {
    action = [&]() {
      std::vector<std::string> inputs;
      if (!dec_input.empty()) inputs.push_back(dec_input);
      if (!dec_file.empty()) {
        std::ifstream in(dec_file);
        if (!in) throw data_error("cannot open " + dec_file);
        std::string line;
        while (std::getline(in, line)) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (!line.empty()) inputs.push_back(line);
        }
      }
      if (inputs.empty()) throw config_error("decode needs --input or --input-file");
      const std::string dtype = read_checkpoint_config(dec_ckpt).value("dtype", "f32");
      return dtype == "f64" ? run_decode<double>(dec_ckpt, inputs, dec_flags)
                            : run_decode<float>(dec_ckpt, inputs, dec_flags);
    };
  });

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic correction corpus");
  std::string synth_out = "data/synth";
  std::size_t synth_train = 20000, synth_eval = 2000;
  std::uint64_t synth_seed = 1;
  CorruptionConfig synth_cc{0.09, 0.03, 0.03, 0.0};
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--train", synth_train, "number of training pairs");
  synth->add_option("--eval", synth_eval, "number of eval pairs");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--p-sub", synth_cc.p_sub, "substitution probability");
  synth->add_option("--p-del", synth_cc.p_del, "deletion probability");
  synth->add_option("--p-ins", synth_cc.p_ins, "insertion probability");
  synth->add_option("--p-swap", synth_cc.p_swap, "adjacent swap probability");
  synth->callback([&] {
    action = [&] { return run_synth(synth_out, synth_train, synth_eval, synth_seed, synth_cc); };
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check (64-bit)");
  std::size_t gc_vocab = 7, gc_d = 8, gc_h = 2, gc_l = 2, gc_ff = 32, gc_n = 4, gc_m = 3;
  std::uint64_t gc_seed = 1;
  double gc_step = 1e-5, gc_tol = 1e-4;
  gc->add_option("--vocab", gc_vocab, "vocabulary size (>= 5)");
  gc->add_option("--d-model", gc_d, "model width");
  gc->add_option("--heads", gc_h, "attention heads");
  gc->add_option("--layers", gc_l, "layers");
  gc->add_option("--d-ff", gc_ff, "feed-forward width");
  gc->add_option("--src-len", gc_n, "source length");
  gc->add_option("--tgt-len", gc_m, "target length");
  gc->add_option("--seed", gc_seed, "init seed");
  gc->add_option("--fd-step", gc_step, "finite-difference step");
  gc->add_option("--tol", gc_tol, "max relative error to pass");
  gc->callback([&] {
    action = [&] {
      return run_gradcheck(gc_vocab, gc_d, gc_h, gc_l, gc_ff, gc_n, gc_m, gc_seed, gc_step, gc_tol);
    };
  });

  // mask
  auto* mask = app.add_subcommand("mask", "print an attention mask as 0/1 rows");
  std::size_t mask_n = 4, mask_m = 3;
  std::string mask_mode = "pbd";
  mask->add_option("--source-len", mask_n, "source length");
  mask->add_option("--target-len", mask_m, "target length");
  mask->add_option("--mode", mask_mode, "pbd or causal");
  mask->callback([&] { action = [&] { return run_mask(mask_n, mask_m, mask_mode); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return action();
  } catch (const pbd::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
}
