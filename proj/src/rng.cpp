#include "flare/rng.hpp"

#include <cmath>

#include "flare/error.hpp"

namespace flare {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

uint64_t derive_seed(uint64_t master, std::string_view tag) {
  return splitmix64(master ^ splitmix64(fnv1a64(tag)));
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
  return splitmix64(derive_seed(master, tag) + index);
}

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw ContractError("Rng::uniform_int: n must be positive");
  uint64_t rem = std::numeric_limits<uint64_t>::max() % n;
  uint64_t limit = std::numeric_limits<uint64_t>::max() - rem;
  for (;;) {
    uint64_t x = engine_();
    if (x <= limit) return x % n;
  }
}

double Rng::normal() {
  // Box-Muller; u clamped away from 0 so the log is finite.
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  double v = uniform();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
}

}  // namespace flare
