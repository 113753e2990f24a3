#pragma once

#include <cmath>
#include <cstdint>

namespace arw {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stream key for replica r of a run with the given seed:
// splitmix64 applied to seed, then to (hash ^ r).
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t replica) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    std::uint64_t t = h ^ (replica * 0xd1b54a32d192ed03ULL);
    return splitmix64(t);
}

// xoshiro256** seeded through splitmix64.
class Rng {
public:
    explicit Rng(std::uint64_t key = 0) { reseed(key); }

    void reseed(std::uint64_t key) {
        std::uint64_t s = key;
        for (auto& w : s_) w = splitmix64(s);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0,1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    // Uniform on (0,1].
    double uniform_pos() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }
    double exponential(double rate) { return -std::log(uniform_pos()) / rate; }
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
    }
    double normal() {
        double u = uniform_pos(), v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

}  // namespace arw
