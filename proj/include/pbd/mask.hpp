#pragma once

#include <string>

#include "pbd/common.hpp"

namespace pbd {

// Boolean attention mask over [num_queries x num_keys]; true = may attend.
// When the keys are the concatenation [source || target], key_layout records
// the split so the dump format can draw the block boundary.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t source_len = 0;  // leading source block width; 0 when keys are target-only
  std::size_t target_len = 0;
  std::vector<std::uint8_t> allowed;

  AttentionMask() = default;
  AttentionMask(std::size_t r, std::size_t c, bool fill = false)
      : rows(r), cols(c), target_len(c), allowed(r * c, fill ? 1 : 0) {}

  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { allowed[r * cols + c] = v ? 1 : 0; }

  // Invariant: no query row may be fully masked.
  void check_no_empty_rows() const;
};

AttentionMask build_all_allowed_mask(std::size_t m, std::size_t k);

// Lower-triangular m x m mask for a plain causal decoder.
AttentionMask build_causal_mask(std::size_t m);

// Mask over the concatenated [source 1..n || target 1..m] keys: query i may
// attend to target keys 1..i and to the pseudo future, source keys i+1..n.
AttentionMask build_pbd_mask(std::size_t n, std::size_t m);

// One row per sequence; true exactly for key positions < length.
AttentionMask build_padding_mask(const std::vector<std::size_t>& lengths, std::size_t max_len);

// Elementwise AND of equal-shaped masks.
AttentionMask mask_and(const AttentionMask& a, const AttentionMask& b);

// AND a per-key keep-row (e.g. a padding mask row) into every query row of a
// block of columns starting at col_offset.
AttentionMask mask_and_key_row(const AttentionMask& m, const AttentionMask& key_row, std::size_t row_index,
                               std::size_t col_offset);

// Dump format: one query row per line, 0/1 columns space-separated, with a
// '|' between the source and target blocks when both are present.
std::string format_mask(const AttentionMask& m);

}  // namespace pbd
