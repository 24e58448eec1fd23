#pragma once

#include <map>
#include <span>
#include <string>

#include "pbd/common.hpp"

namespace pbd {

// Text is handled as UTF-8 codepoint sequences; normalization is the
// caller's responsibility. The corpora this targets are plain lowercase
// ASCII, where codepoints and characters coincide.
std::vector<std::uint32_t> utf8_decode(const std::string& s);
std::string utf8_encode(std::span<const std::uint32_t> cps);

// Character vocabulary with fixed specials PAD=0, BOS=1, EOS=2, UNK=3.
struct Vocab {
  std::vector<std::uint32_t> chars;       // codepoints for ids 4..
  std::map<std::uint32_t, std::int32_t> to_id;

  std::size_t size() const { return 4 + chars.size(); }
  std::int32_t id_of(std::uint32_t cp) const;
  std::string alphabet_utf8() const { return utf8_encode(chars); }
};

Vocab build_vocab_from_alphabet(const std::string& utf8_alphabet);

struct Example {
  std::string source;
  std::string target;
};

Vocab build_vocab(const std::vector<Example>& corpus);

std::vector<std::int32_t> encode_text(const Vocab& vocab, const std::string& s);
// Stops at the first EOS, drops the other specials.
std::string decode_text(const Vocab& vocab, std::span<const std::int32_t> ids);

// One example per line, source TAB target, UTF-8, CR/LF-tolerant.
std::vector<Example> load_tsv(const std::string& path, bool lowercase = false);
void write_tsv(const std::string& path, const std::vector<Example>& examples);

struct CorruptionConfig {
  double p_sub = 0.0;
  double p_del = 0.0;
  double p_ins = 0.0;
  double p_swap = 0.0;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";

  double total() const { return p_sub + p_del + p_ins + p_swap; }
  void validate() const;
};

// Independent per-position substitution/deletion/insertion/adjacent-swap
// edits; deterministic given the rng state.
std::string corrupt_word(const std::string& word, const CorruptionConfig& cfg, Rng& rng);

struct Batch {
  IntMatrix source_ids;         // [B, n_max], each row: chars + EOS + padding
  IntMatrix target_input_ids;   // [B, m_max], each row: BOS + chars + padding
  IntMatrix target_output_ids;  // [B, m_max], each row: chars + EOS + padding
  std::vector<std::size_t> source_lengths;
  std::vector<std::size_t> target_lengths;

  std::size_t size() const { return source_lengths.size(); }
};

// Seeded shuffle, then fixed-size batches padded to the per-batch maxima.
std::vector<Batch> make_batches(const std::vector<Example>& examples, const Vocab& vocab,
                                std::size_t batch_size, std::size_t max_len, std::uint64_t seed);

// Curated lowercase dictionary for synthetic correction tasks.
const std::vector<std::string>& builtin_words();

}  // namespace pbd
