#include "mcpm/rng.hpp"

#include <cmath>

namespace mcpm {

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller on two uniforms; u clamped away from 0 for the log.
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  double v = uniform();
  double radius = std::sqrt(-2.0 * std::log(u));
  double angle = 2.0 * 3.141592653589793238462643383279502884 * v;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

uint64_t Rng::integer(uint64_t n) {
  if (n == 0) return 0;
  uint64_t bound = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = next();
  } while (x >= bound);
  return x % n;
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t base, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the tag
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return splitmix64(base ^ splitmix64(h));
}

uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index) {
  return splitmix64(derive_seed(base, tag) ^ splitmix64(index + 0x51ed2701ull));
}

}  // namespace mcpm
