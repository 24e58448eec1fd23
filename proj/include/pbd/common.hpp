#pragma once

#include <cstdint>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbd {

// Special token ids, fixed for every vocabulary built by this library.
inline constexpr std::int32_t PAD_ID = 0;
inline constexpr std::int32_t BOS_ID = 1;
inline constexpr std::int32_t EOS_ID = 2;
inline constexpr std::int32_t UNK_ID = 3;

// Error categories used across the library. The CLI maps these onto exit
// codes: config/data problems are user-correctable (exit 2), the rest are
// internal failures (exit 1).
class error : public std::runtime_error {
public:
  error(std::string category, const std::string& msg)
      : std::runtime_error(category + ": " + msg), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

private:
  std::string category_;
};

struct shape_error : error {
  explicit shape_error(const std::string& msg) : error("shape", msg) {}
};
struct config_error : error {
  explicit config_error(const std::string& msg) : error("config", msg) {}
};
struct contract_error : error {
  explicit contract_error(const std::string& msg) : error("contract", msg) {}
};
struct data_error : error {
  explicit data_error(const std::string& msg) : error("data", msg) {}
};
struct format_error : error {
  explicit format_error(const std::string& msg) : error("format", msg) {}
};
struct training_error : error {
  explicit training_error(const std::string& msg) : error("training", msg) {}
};
struct index_error : error {
  explicit index_error(const std::string& msg) : error("index", msg) {}
};
struct length_error : error {
  explicit length_error(const std::string& msg) : error("length", msg) {}
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Deterministic xoshiro256++ generator. The standard <random> distributions
// are implementation-defined, so all sampling is done here explicitly to keep
// seeded runs reproducible across toolchains.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    // splitmix64 seed expansion
    std::uint64_t x = seed;
    for (auto& si : s_) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      si = z ^ (z >> 31);
    }
  }

  std::uint64_t next() {
    auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0,n)
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

private:
  std::uint64_t s_[4];
};

// Small integer matrix for token id batches.
struct IntMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> v;

  IntMatrix() = default;
  IntMatrix(std::size_t r, std::size_t c, std::int32_t fill = 0) : rows(r), cols(c), v(r * c, fill) {}

  std::int32_t& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  std::int32_t at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

}  // namespace pbd
