// Seeded PRNG used everywhere determinism matters (synthetic stacks, probe
// inputs, sphere sampling). The bitstream is xoshiro256++ seeded through
// splitmix64, so traces are reproducible from the seed alone.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace namex {

struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
};

class Xoshiro256pp {
  public:
    explicit Xoshiro256pp(uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : s_) w = sm.next();
    }

    uint64_t next() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1], safe under log()
    double uniform_pos() { return double((next() >> 11) + 1) * 0x1.0p-53; }

    // standard normal via Box-Muller; consumes two draws per call
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> s_{};
};

// Independent stream for item `index` under a run seed. Used where work is
// distributed across threads but the result must not depend on scheduling.
inline Xoshiro256pp stream_for(uint64_t seed, uint64_t index) {
    SplitMix64 sm(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    return Xoshiro256pp(sm.next());
}

}  // namespace namex
