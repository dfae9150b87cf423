#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dpg {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counter-based stream split. A stream is identified by the root seed plus a
// path of integer labels (iteration, purpose, attempt, sample index, ...). The
// derived seed depends only on that path, never on how many draws other
// streams made, so parallel and serial evaluation agree bit for bit.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t root,
                                                  std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t s = mix64(root);
    for (std::uint64_t label : path) {
        s = mix64(s ^ mix64(label + 0x632be59bd9b4e019ULL));
    }
    return s;
}

[[nodiscard]] inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

[[nodiscard]] inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    return Rng{derive_seed(root, path)};
}

} // namespace dpg
