#pragma once

// Seeded random streams. std::mt19937_64 and std::seed_seq are fully specified by the
// standard; the distributions are not, so the bounded draws below are done by hand to
// keep outputs identical across standard library implementations.

#include <cstdint>
#include <random>
#include <string_view>

namespace atomic_sim
{
    inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept
    {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s)
        {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    /// SplitMix64 finalizer; used to derive independent seeds and per-flood priorities.
    inline constexpr std::uint64_t mix64(std::uint64_t x) noexcept
    {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    class RandomStream
    {
    public:
        RandomStream() : RandomStream(0) {}

        explicit RandomStream(std::uint64_t seed)
        {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
            engine_.seed(seq);
        }

        /// Named sub-stream of a master seed. Different names never share state.
        static RandomStream derive(std::uint64_t master, std::string_view name)
        {
            return RandomStream(mix64(master ^ fnv1a(name)));
        }

        std::uint64_t next() { return engine_(); }

        /// Uniform in [0, 1) with 53 bits of resolution.
        double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

        /// Uniform in [0, bound) by rejection; bound must be positive.
        std::uint64_t below(std::uint64_t bound)
        {
            const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
            std::uint64_t x;
            do
                x = engine_();
            while (x >= limit);
            return x % bound;
        }

        bool bernoulli(double p) { return uniform() < p; }

    private:
        std::mt19937_64 engine_;
    };
}
