#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace rdeg
{

// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

//! Folds a word into a running key; order-sensitive.
constexpr std::uint64_t fold_key(std::uint64_t key, std::uint64_t word) noexcept
{
    return mix64(key ^ mix64(word + 0x9e3779b97f4a7c15ULL));
}

//---------------------------------------------------------------------------//
/*!
 * Counter-based random stream.
 *
 * The n-th output is a pure function of (key, n), so a stream can be rebuilt
 * anywhere from its key alone. Streams for different (seed, agent, round,
 * query) tuples are derived with for_agent(); no state is shared between
 * them, which makes concurrent sampling order-independent.
 *
 * Satisfies UniformRandomBitGenerator.
 */
class CounterStream
{
public:
    using result_type = std::uint64_t;

    explicit CounterStream(std::uint64_t key) noexcept : key_(key) {}

    static CounterStream for_agent(std::uint64_t seed, std::uint64_t agent, std::uint64_t round,
                                   std::uint64_t query) noexcept
    {
        std::uint64_t k = fold_key(0x5244454721ULL, seed);
        k = fold_key(k, agent);
        k = fold_key(k, round);
        k = fold_key(k, query);
        return CounterStream(k);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()() noexcept
    {
        ++counter_;
        return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
    }

    //! Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    //! Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept
    {
        if (has_spare_)
        {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do
        {
            u1 = uniform();
        } while (u1 == 0.0);
        double const u2 = uniform();
        double const radius = std::sqrt(-2.0 * std::log(u1));
        double const angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace rdeg
