#include "tta/random.hpp"

#include <cmath>

namespace tta {

Rng substream(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the stream name.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

double truncated_normal(Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (;;) {
    double x = dist(rng);
    if (std::abs(x) <= 2.0) return x * stddev;
  }
}

}  // namespace tta
