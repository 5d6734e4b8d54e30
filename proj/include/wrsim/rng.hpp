#pragma once

#include <boost/random/poisson_distribution.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

namespace wrsim {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based generator: output n is a keyed hash of n, so streams are reproducible and splittable.
class CounterRng {
public:
    using result_type = uint64_t;
    static constexpr const char* algorithm = "splitmix64-counter";

    explicit CounterRng(uint64_t seed = 0, uint64_t stream = 0)
        : seed_(seed), stream_(stream), key_(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return splitmix64(key_ + 0xd1b54a32d192ed03ULL * counter_++); }

    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    uint64_t below(uint64_t n) { return n == 0 ? 0 : (*this)() % n; }

    long poisson(double mean) {
        if (mean <= 0) return 0;
        boost::random::poisson_distribution<long, double> dist(mean);
        return dist(*this);
    }

    // Poisson(mean) conditioned on being at least 1.
    long poisson_positive(double mean) {
        if (mean >= 1.0) {
            for (;;) {
                long k = poisson(mean);
                if (k > 0) return k;
            }
        }
        double u = uniform() * -std::expm1(-mean);
        double term = mean * std::exp(-mean);
        long k = 1;
        double acc = term;
        while (u > acc && k < 1000) {
            ++k;
            term *= mean / static_cast<double>(k);
            acc += term;
        }
        return k;
    }

    CounterRng split(uint64_t stream) const { return CounterRng(splitmix64(seed_ + 1), splitmix64(stream_) ^ stream); }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }
    uint64_t counter() const { return counter_; }

private:
    uint64_t seed_;
    uint64_t stream_;
    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace wrsim
