#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace dbt {

// Error categories. The CLI maps each to a distinct exit code.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Mixes a stream key into a seed. Streams derived from distinct keys are
/// independent, so parallel work can be seeded by index rather than by
/// schedule order.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
    return splitmix64(splitmix64(seed) ^ (key * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
}

template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key, Keys... rest) {
    return derive_seed(derive_seed(seed, key), static_cast<std::uint64_t>(rest)...);
}

/// xoshiro256** generator. Satisfies UniformRandomBitGenerator, so it plugs
/// into the <random> distributions; construction is cheap enough to create
/// one per bootstrap resample.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& word : state_) {
            s += 0x9E3779B97F4A7C15ull;
            word = splitmix64(s);
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), n >= 1. Lemire's multiply-shift with rejection.
    std::size_t below(std::size_t n) {
        const auto bound = static_cast<std::uint64_t>(n);
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::size_t>(m >> 64);
    }

    /// Standard normal via Box-Muller (no cached spare, so draws stay
    /// position-independent).
    double normal();

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4]{};
};

/// Upper bound on worker threads used by parallel_for. 0 means hardware
/// concurrency. Results never depend on this value.
void set_max_threads(unsigned n);
unsigned max_threads();

/// Runs body(i) for i in [0, n). Each index is executed exactly once; callers
/// write results into per-index slots so output is schedule-independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dbt
