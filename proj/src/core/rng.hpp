#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dpa {

// Derive a child seed from a master seed and a stream name (FNV-1a over the
// name mixed with the master seed). Used to split one master seed into the
// independent "env" / "train" / "attack" / "eval" streams.
uint64_t derive_seed(uint64_t master, std::string_view name);
uint64_t derive_seed(uint64_t master, std::string_view name, uint64_t index);

// Deterministic RNG. Built on mt19937_64 (whose bit stream is specified by
// the standard) with hand-rolled uniform/normal transforms so that identical
// seeds produce bit-identical doubles on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dpa
