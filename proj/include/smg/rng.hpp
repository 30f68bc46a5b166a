#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace smg {

using Rng = std::mt19937_64;

/// Independent generator per (seed, stream) so that consumers of one seed do
/// not share a noise sequence.
inline Rng make_rng(std::uint64_t seed, std::string_view stream = {}) {
  std::uint64_t tag = 1469598103934665603ull;
  for (char c : stream) tag = (tag ^ static_cast<unsigned char>(c)) * 1099511628211ull;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

}  // namespace smg
