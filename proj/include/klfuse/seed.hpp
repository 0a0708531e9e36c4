#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace klfuse {

using Rng = std::mt19937_64;

// Seed derivation used everywhere a deterministic sub-stream is needed.
//
//   mix64(x)          SplitMix64 finalizer:
//                       x += 0x9E3779B97F4A7C15
//                       x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
//                       x = (x ^ (x >> 27)) * 0x94D049BB133111EB
//                       x ^= x >> 31
//   tag_hash(s)       64-bit FNV-1a of the UTF-8 bytes of s
//   derive(a, b)      mix64(a ^ mix64(b))
//
// A stage seed is derive(derive(master_seed, trial_index), tag_hash(tag)).
// These definitions are part of the reproducibility contract; do not change
// them without bumping the CSV schema version.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t tag_hash(std::string_view tag) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

constexpr std::uint64_t derive(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(a ^ mix64(b));
}

constexpr std::uint64_t derive(std::uint64_t a, std::string_view tag) noexcept {
    return derive(a, tag_hash(tag));
}

constexpr std::uint64_t trial_seed(std::uint64_t master_seed, std::uint64_t trial_index) noexcept {
    return derive(master_seed, trial_index);
}

constexpr std::uint64_t stage_seed(std::uint64_t master_seed, std::uint64_t trial_index,
                                   std::string_view tag) noexcept {
    return derive(trial_seed(master_seed, trial_index), tag);
}

}  // namespace klfuse
