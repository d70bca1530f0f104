#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>

namespace blindcal {

// Counter-based random stream: output i is a pure function of (key, i), so
// draws can be replayed or parallelized without shared state. The mixer is
// the splitmix64 finalizer over key + i*gamma.
namespace detail {
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
}  // namespace detail

// Folds a word into a running seed. Not cryptographic; just well-spread.
inline constexpr std::uint64_t seed_combine(std::uint64_t seed, std::uint64_t word) {
    return detail::mix64(seed + detail::kGolden + word * 0xD6E8FEB86659FD93ull);
}

// Sub-stream key for a named draw, e.g. derive_seed(seed, "gains").
// Independent labels give independent, order-insensitive streams.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = seed_combine(seed, label.size());
    std::uint64_t word = 0;
    int shift = 0;
    for (unsigned char c : label) {
        word |= static_cast<std::uint64_t>(c) << shift;
        shift += 8;
        if (shift == 64) {
            h = seed_combine(h, word);
            word = 0;
            shift = 0;
        }
    }
    if (shift != 0) h = seed_combine(h, word);
    return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::span<const std::uint64_t> words) {
    std::uint64_t h = seed_combine(seed, words.size());
    for (std::uint64_t w : words) h = seed_combine(h, w);
    return h;
}

class SeedStream {
public:
    explicit constexpr SeedStream(std::uint64_t key) : key_(key) {}

    constexpr std::uint64_t next_u64() {
        return detail::mix64(key_ + (++counter_) * detail::kGolden);
    }

    // Uniform in the open interval (0, 1); never returns 0 or 1, so it is
    // safe under log().
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller, two uniforms per draw.
    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased draw from {0, 1, ..., n-1} (Lemire's method).
    std::uint64_t next_below(std::uint64_t n) {
        unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        std::uint64_t low = static_cast<std::uint64_t>(wide);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                wide = static_cast<unsigned __int128>(next_u64()) * n;
                low = static_cast<std::uint64_t>(wide);
            }
        }
        return static_cast<std::uint64_t>(wide >> 64);
    }

    constexpr std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace blindcal
