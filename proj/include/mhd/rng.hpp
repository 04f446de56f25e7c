#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace mhd {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent, reproducible sub-stream seed for (base, tags...).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::span<const std::uint64_t> tags) {
    std::uint64_t h = mix64(base);
    for (std::uint64_t t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    return h;
}
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    return derive_seed(base, std::span<const std::uint64_t>(tags.begin(), tags.size()));
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Named stream tags so call sites stay readable.
namespace stream {
inline constexpr std::uint64_t dataset = 1;
inline constexpr std::uint64_t partition = 2;
inline constexpr std::uint64_t init = 3;
inline constexpr std::uint64_t private_batch = 4;
inline constexpr std::uint64_t public_batch = 5;
inline constexpr std::uint64_t teachers = 6;
inline constexpr std::uint64_t pool = 7;
inline constexpr std::uint64_t selection = 8;
inline constexpr std::uint64_t topology = 9;
}  // namespace stream

}  // namespace mhd
