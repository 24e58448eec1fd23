#include "pbd/mask.hpp"

#include <sstream>

namespace pbd {

void AttentionMask::check_no_empty_rows() const {
  for (std::size_t r = 0; r < rows; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols && !any; ++c) any = at(r, c);
    if (!any) throw contract_error("attention mask row " + std::to_string(r) + " allows no keys");
  }
}

AttentionMask build_all_allowed_mask(std::size_t m, std::size_t k) {
  if (m == 0 || k == 0) throw contract_error("mask dimensions must be positive");
  return AttentionMask(m, k, true);
}

AttentionMask build_causal_mask(std::size_t m) {
  if (m == 0) throw contract_error("causal mask needs m >= 1");
  AttentionMask mask(m, m, false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
  return mask;
}

AttentionMask build_pbd_mask(std::size_t n, std::size_t m) {
  if (m == 0) throw contract_error("pbd mask needs target_len >= 1");
  AttentionMask mask(m, n + m, false);
  mask.source_len = n;
  mask.target_len = m;
  // Query i (0-based) predicts output token i+1: it sees target keys 0..i and
  // source keys i+1..n-1, the copied pseudo future.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) mask.set(i, j, true);
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, n + j, true);
  }
  mask.check_no_empty_rows();
  return mask;
}

AttentionMask build_padding_mask(const std::vector<std::size_t>& lengths, std::size_t max_len) {
  if (lengths.empty() || max_len == 0) throw contract_error("padding mask needs lengths and max_len >= 1");
  AttentionMask mask(lengths.size(), max_len, false);
  for (std::size_t r = 0; r < lengths.size(); ++r) {
    if (lengths[r] > max_len)
      throw contract_error("padding mask: length " + std::to_string(lengths[r]) + " exceeds max_len " +
                           std::to_string(max_len));
    for (std::size_t c = 0; c < lengths[r]; ++c) mask.set(r, c, true);
  }
  return mask;
}

AttentionMask mask_and(const AttentionMask& a, const AttentionMask& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw shape_error("mask_and: shape mismatch [" + std::to_string(a.rows) + "," + std::to_string(a.cols) +
                      "] vs [" + std::to_string(b.rows) + "," + std::to_string(b.cols) + "]");
  AttentionMask out = a;
  for (std::size_t i = 0; i < out.allowed.size(); ++i) out.allowed[i] = a.allowed[i] & b.allowed[i];
  return out;
}

AttentionMask mask_and_key_row(const AttentionMask& m, const AttentionMask& key_row, std::size_t row_index,
                               std::size_t col_offset) {
  if (row_index >= key_row.rows || col_offset + key_row.cols > m.cols)
    throw shape_error("mask_and_key_row: key row does not fit into mask columns");
  AttentionMask out = m;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < key_row.cols; ++c)
      if (!key_row.at(row_index, c)) out.set(r, col_offset + c, false);
  return out;
}

std::string format_mask(const AttentionMask& m) {
  std::ostringstream os;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) os << ' ';
      if (m.source_len > 0 && c == m.source_len) os << "| ";
      os << (m.at(r, c) ? '1' : '0');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pbd
