#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace statecast {

/// All randomness in the library flows through mt19937_64 generators seeded
/// from a master seed via splitmix64-based derivation. Derived streams let
/// independent units of work (EM runs, lattice sites, benchmark replicates)
/// draw in parallel while staying bit-reproducible.
using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Derives an independent seed from a master seed and a stream path.
/// Distinct paths give statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = detail::splitmix64(master);
    for (std::uint64_t key : path) s = detail::splitmix64(s ^ key);
    return s;
}

inline Rng make_rng(std::uint64_t seed) {
    return Rng(seed);
}

// Stream tags for derive_seed paths.
namespace stream {
inline constexpr std::uint64_t kInit = 0x696e6974;       // EM chain initialization
inline constexpr std::uint64_t kCell = 0x63656c6c;       // per-site simulation draws
inline constexpr std::uint64_t kReplicate = 0x7265706c;  // benchmark replicates
inline constexpr std::uint64_t kField = 0x666c6400;      // field simulation
}  // namespace stream

}  // namespace statecast
