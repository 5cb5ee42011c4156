#pragma once

#include "pofl/serial.hpp"
#include "pofl/sha256.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace pofl {

// Deterministic random stream. All randomness in the library flows through
// this wrapper instead of std:: distributions, so replays are bit-identical
// regardless of the standard library in use.
class rng {
public:
    explicit rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    uint64_t uniform_index(uint64_t n) {
        if (n == 0)
            throw std::invalid_argument("uniform_index over empty range");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    int64_t uniform_int(int64_t lo, int64_t hi) { // inclusive bounds
        return lo + int64_t(uniform_index(uint64_t(hi - lo + 1)));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return mean + stddev * mag * std::cos(2.0 * M_PI * u2);
    }

    double exponential(double mean) {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return -mean * std::log(u);
    }

    template <typename T>
    void shuffle(std::vector<T> &v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[size_t(uniform_index(i))]);
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Named substream derivation: hash the parent seed with a label and indices
// so independent components never share a stream.
inline uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t a = 0, uint64_t b = 0) {
    ser::writer w;
    w.put_u64(master);
    w.put_bytes(to_bytes(label));
    w.put_u64(a);
    w.put_u64(b);
    digest32 d = sha256(w.bytes());
    uint64_t out = 0;
    for (int i = 0; i < 8; ++i)
        out = out << 8 | d[size_t(i)];
    return out;
}

} // namespace pofl
