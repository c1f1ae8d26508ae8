#pragma once

#include <cstdint>
#include <random>

namespace popmix {

using Engine = std::mt19937_64;

/// Independent stream keyed by (seed, stream). Streams do not depend on the
/// order in which they are created.
inline Engine make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return Engine(seq);
}

/// Uniform on [0, 1) from the top 53 bits; bit-reproducible across stdlibs.
inline double uniform_closed_open(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform on the open interval (0, 1).
inline double uniform_open(Engine& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Derives a sub-seed for grid point `index` of a sweep.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  auto stream = make_stream(seed, index ^ 0xa5a5a5a5a5a5a5a5ull);
  return stream();
}

}  // namespace popmix
