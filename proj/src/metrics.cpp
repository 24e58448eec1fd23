#include "pbd/inference.hpp"

#include "pbd/data.hpp"

namespace pbd {

std::size_t levenshtein(const std::string& a, const std::string& b) {
  const std::vector<std::uint32_t> x = utf8_decode(a);
  const std::vector<std::uint32_t> y = utf8_decode(b);
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

double exact_match(const std::vector<std::string>& predictions, const std::vector<std::string>& references) {
  if (predictions.size() != references.size())
    throw contract_error("exact_match: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(references.size()) + " references");
  if (references.empty()) throw contract_error("exact_match: empty corpus");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < references.size(); ++i)
    if (predictions[i] == references[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(references.size());
}

double char_error_rate(const std::vector<std::string>& predictions, const std::vector<std::string>& references) {
  if (predictions.size() != references.size())
    throw contract_error("char_error_rate: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(references.size()) + " references");
  std::size_t edits = 0, ref_len = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    edits += levenshtein(predictions[i], references[i]);
    ref_len += utf8_decode(references[i]).size();
  }
  if (ref_len == 0) throw contract_error("char_error_rate: references have no characters");
  return static_cast<double>(edits) / static_cast<double>(ref_len);
}

}  // namespace pbd
