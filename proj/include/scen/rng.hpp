#pragma once

#include <cmath>
#include <cstdint>

namespace scen {

// Counter-based generator: the value at (seed, stream, counter) is a pure
// function of the three, so draws never depend on call order elsewhere in
// the program. Mixing is SplitMix64's finaliser applied to a keyed counter.
class CounterRng {
   public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ULL))) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t bits(std::uint64_t counter) const { return mix(key_ + counter * 0xd1b54a32d192ed03ULL); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform(std::uint64_t counter) const { return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t counter, std::uint64_t n) const {
        return static_cast<std::uint64_t>(uniform(counter) * static_cast<double>(n));
    }

    // Standard normal via Box-Muller on counters 2c and 2c+1.
    double normal(std::uint64_t counter) const {
        const double u1 = 1.0 - uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

   private:
    std::uint64_t key_;
};

// Sequential convenience wrapper over CounterRng.
class RngStream {
   public:
    RngStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}
    double uniform() { return rng_.uniform(counter_++); }
    std::uint64_t below(std::uint64_t n) { return rng_.below(counter_++, n); }
    double normal() { return rng_.normal(counter_++); }

    template <class Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

   private:
    CounterRng rng_;
    std::uint64_t counter_ = 0;
};

}  // namespace scen
