#include "pbd/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>

namespace pbd {

std::vector<std::uint32_t> utf8_decode(const std::string& s) {
  std::vector<std::uint32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  const auto* p = reinterpret_cast<const unsigned char*>(s.data());
  while (i < s.size()) {
    const unsigned char b0 = p[i];
    std::size_t len;
    std::uint32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xe0) == 0xc0) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      throw data_error("invalid UTF-8 byte at offset " + std::to_string(i));
    }
    if (i + len > s.size()) throw data_error("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k) {
      if ((p[i + k] & 0xc0) != 0x80)
        throw data_error("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (p[i + k] & 0x3f);
    }
    static constexpr std::uint32_t min_cp[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_cp[len] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff))
      throw data_error("invalid UTF-8 codepoint at offset " + std::to_string(i));
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(std::span<const std::uint32_t> cps) {
  std::string out;
  out.reserve(cps.size());
  for (std::uint32_t cp : cps) {
    if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff))
      throw data_error("cannot encode codepoint " + std::to_string(cp));
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }
  return out;
}

std::int32_t Vocab::id_of(std::uint32_t cp) const {
  auto it = to_id.find(cp);
  return it == to_id.end() ? UNK_ID : it->second;
}

static Vocab vocab_from_codepoints(const std::set<std::uint32_t>& cps) {
  Vocab v;
  v.chars.assign(cps.begin(), cps.end());  // set iteration is already sorted
  for (std::size_t i = 0; i < v.chars.size(); ++i)
    v.to_id[v.chars[i]] = static_cast<std::int32_t>(4 + i);
  return v;
}

Vocab build_vocab_from_alphabet(const std::string& utf8_alphabet) {
  std::set<std::uint32_t> cps;
  for (std::uint32_t cp : utf8_decode(utf8_alphabet)) cps.insert(cp);
  if (cps.empty()) throw data_error("alphabet is empty");
  return vocab_from_codepoints(cps);
}

Vocab build_vocab(const std::vector<Example>& corpus) {
  std::set<std::uint32_t> cps;
  for (const auto& ex : corpus) {
    for (std::uint32_t cp : utf8_decode(ex.source)) cps.insert(cp);
    for (std::uint32_t cp : utf8_decode(ex.target)) cps.insert(cp);
  }
  if (cps.empty()) throw data_error("corpus has no characters to build a vocabulary from");
  return vocab_from_codepoints(cps);
}

std::vector<std::int32_t> encode_text(const Vocab& vocab, const std::string& s) {
  std::vector<std::int32_t> ids;
  for (std::uint32_t cp : utf8_decode(s)) ids.push_back(vocab.id_of(cp));
  return ids;
}

std::string decode_text(const Vocab& vocab, std::span<const std::int32_t> ids) {
  std::vector<std::uint32_t> cps;
  for (std::int32_t id : ids) {
    if (id == EOS_ID) break;
    if (id == PAD_ID || id == BOS_ID || id == UNK_ID) continue;
    const std::size_t k = static_cast<std::size_t>(id) - 4;
    if (id < 0 || k >= vocab.chars.size())
      throw index_error("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(vocab.size()));
    cps.push_back(vocab.chars[k]);
  }
  return utf8_encode(cps);
}

std::vector<Example> load_tsv(const std::string& path, bool lowercase) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw data_error(path + ":" + std::to_string(lineno) + ": expected exactly one TAB, found none");
    if (line.find('\t', tab + 1) != std::string::npos)
      throw data_error(path + ":" + std::to_string(lineno) + ": expected exactly one TAB, found more");
    Example ex{line.substr(0, tab), line.substr(tab + 1)};
    if (ex.source.empty() || ex.target.empty())
      throw data_error(path + ":" + std::to_string(lineno) + ": empty source or target");
    if (lowercase) {
      for (auto& part : {&ex.source, &ex.target})
        std::transform(part->begin(), part->end(), part->begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    utf8_decode(ex.source);  // validate encoding early, with a line number
    utf8_decode(ex.target);
    out.push_back(std::move(ex));
  }
  return out;
}

void write_tsv(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path + " for writing");
  for (const auto& ex : examples) out << ex.source << '\t' << ex.target << '\n';
  if (!out) throw data_error("failed writing " + path);
}

void CorruptionConfig::validate() const {
  for (double p : {p_sub, p_del, p_ins, p_swap})
    if (p < 0.0 || p > 1.0) throw config_error("corruption probabilities must lie in [0,1]");
  if (total() > 1.0) throw config_error("corruption probabilities sum to more than 1");
  if ((p_sub > 0.0 || p_ins > 0.0) && alphabet.empty())
    throw config_error("substitution/insertion corruption needs a non-empty alphabet");
}

std::string corrupt_word(const std::string& word, const CorruptionConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::vector<std::uint32_t> cps = utf8_decode(word);
  const std::vector<std::uint32_t> alpha = utf8_decode(cfg.alphabet);
  std::vector<std::uint32_t> out;
  out.reserve(cps.size() + 2);

  // Draw a character different from `orig` when the alphabet allows it.
  auto draw_other = [&](std::uint32_t orig) {
    std::uint32_t c = alpha[rng.below(alpha.size())];
    if (alpha.size() == 1) return c;
    bool orig_in_alpha = std::find(alpha.begin(), alpha.end(), orig) != alpha.end();
    while (orig_in_alpha && c == orig) c = alpha[rng.below(alpha.size())];
    return c;
  };

  // Each position draws one uniform variate and applies at most one edit, so
  // the expected edit count is len * (p_sub + p_del + p_ins + p_swap).
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const double u = rng.uniform();
    double acc = cfg.p_sub;
    if (u < acc) {
      out.push_back(draw_other(cps[i]));
      continue;
    }
    acc += cfg.p_del;
    if (u < acc) continue;  // drop the character
    acc += cfg.p_ins;
    if (u < acc) {
      out.push_back(alpha[rng.below(alpha.size())]);
      out.push_back(cps[i]);
      continue;
    }
    acc += cfg.p_swap;
    if (u < acc && i + 1 < cps.size()) {
      out.push_back(cps[i + 1]);
      out.push_back(cps[i]);
      ++i;  // the partner was consumed by the swap
      continue;
    }
    out.push_back(cps[i]);
  }
  return utf8_encode(out);
}

std::vector<Batch> make_batches(const std::vector<Example>& examples, const Vocab& vocab,
                                std::size_t batch_size, std::size_t max_len, std::uint64_t seed) {
  if (batch_size == 0) throw config_error("batch_size must be positive");
  if (max_len < 2) throw config_error("max_len must be at least 2");

  struct Encoded {
    std::vector<std::int32_t> src;  // chars + EOS
    std::vector<std::int32_t> tgt;  // chars only
  };
  std::vector<Encoded> enc(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.source.empty() || ex.target.empty())
      throw data_error("example '" + ex.source + "' -> '" + ex.target + "' has an empty side");
    enc[i].src = encode_text(vocab, ex.source);
    enc[i].src.push_back(EOS_ID);
    enc[i].tgt = encode_text(vocab, ex.target);
    if (enc[i].src.size() > max_len || enc[i].tgt.size() + 1 > max_len)
      throw data_error("example '" + ex.source + "' -> '" + ex.target +
                       "' exceeds max_len " + std::to_string(max_len));
  }

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i)  // Fisher-Yates
    std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, order.size() - start);
    std::size_t n_max = 0, m_max = 0;
    for (std::size_t r = 0; r < b; ++r) {
      const auto& e = enc[order[start + r]];
      n_max = std::max(n_max, e.src.size());
      m_max = std::max(m_max, e.tgt.size() + 1);  // +1 for BOS / EOS
    }
    Batch batch;
    batch.source_ids = IntMatrix(b, n_max, PAD_ID);
    batch.target_input_ids = IntMatrix(b, m_max, PAD_ID);
    batch.target_output_ids = IntMatrix(b, m_max, PAD_ID);
    for (std::size_t r = 0; r < b; ++r) {
      const auto& e = enc[order[start + r]];
      for (std::size_t c = 0; c < e.src.size(); ++c) batch.source_ids.at(r, c) = e.src[c];
      batch.target_input_ids.at(r, 0) = BOS_ID;
      for (std::size_t c = 0; c < e.tgt.size(); ++c) {
        batch.target_input_ids.at(r, c + 1) = e.tgt[c];
        batch.target_output_ids.at(r, c) = e.tgt[c];
      }
      batch.target_output_ids.at(r, e.tgt.size()) = EOS_ID;
      batch.source_lengths.push_back(e.src.size());
      batch.target_lengths.push_back(e.tgt.size() + 1);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace pbd
