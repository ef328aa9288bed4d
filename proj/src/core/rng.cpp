#include "core/rng.hpp"

#include <cmath>

namespace dpa {

namespace {
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

uint64_t fnv1a(uint64_t h, const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}
}  // namespace

uint64_t derive_seed(uint64_t master, std::string_view name) {
  uint64_t h = fnv1a(kFnvOffset, &master, sizeof(master));
  h = fnv1a(h, name.data(), name.size());
  return h;
}

uint64_t derive_seed(uint64_t master, std::string_view name, uint64_t index) {
  uint64_t h = derive_seed(master, name);
  return fnv1a(h, &index, sizeof(index));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

}  // namespace dpa
