#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace flare {

// All randomness in the library flows from one master seed.  Sub-seeds for
// independent components are derived as
//   sub = splitmix64(master ^ splitmix64(fnv1a64(tag)))
// so that streams with different tags are decorrelated and the derivation is
// reproducible across platforms.
uint64_t splitmix64(uint64_t x);
uint64_t fnv1a64(std::string_view s);
uint64_t derive_seed(uint64_t master, std::string_view tag);
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index);

// mt19937_64 with hand-rolled output maps.  The standard distributions are
// implementation defined, so uniform/normal are generated here explicitly to
// keep streams identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), n >= 1, via rejection sampling (no modulo bias).
  uint64_t uniform_int(uint64_t n);

  // Standard normal via Box-Muller on two fresh uniforms.
  double normal();

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  Rng fork(std::string_view tag) { return Rng(derive_seed(engine_(), tag)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace flare
