#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mcpm {

/// Seeded randomness with reproducible output. std::mt19937_64 supplies the
/// bit stream (its sequence is pinned by the standard); the mappings to
/// doubles, ranges and shuffles are implemented here instead of using
/// std::*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  /// Uniform in [0,1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; generates pairs, caches the spare.
  double normal();

  /// Uniform integer in [0,n), unbiased via rejection.
  uint64_t integer(uint64_t n);

  /// Uniform integer in [lo,hi], inclusive.
  int int_range(int lo, int hi) {
    return lo + static_cast<int>(integer(static_cast<uint64_t>(hi - lo) + 1));
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Derive an independent stream seed from a base seed and a purpose tag,
/// so that consumers (init, shuffling, per-sample generation) cannot
/// perturb each other's sequences.
uint64_t derive_seed(uint64_t base, std::string_view tag);
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index);

}  // namespace mcpm
