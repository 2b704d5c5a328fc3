#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tta {

using Rng = std::mt19937_64;

/// Independent generator for a named purpose ("init", "shuffle", "masking",
/// "dropout", ...) derived from one user seed.
Rng substream(std::uint64_t seed, std::string_view name);

/// Normal(0, stddev) resampled until it falls within two standard deviations.
double truncated_normal(Rng& rng, double stddev);

}  // namespace tta
