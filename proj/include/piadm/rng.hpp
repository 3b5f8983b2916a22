#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace piadm {

// Counter-based pseudo-random numbers. Every draw is a pure function of a
// key assembled from logical coordinates (seed, sample, block, step, ...),
// so results never depend on thread count or evaluation order.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t key, std::uint64_t word) {
    return splitmix64(key ^ (word + 0x9e3779b97f4a7c15ULL + (key << 6) + (key >> 2)));
}

struct Key {
    std::uint64_t state;

    explicit Key(std::uint64_t seed) : state(splitmix64(seed)) {}

    Key with(std::uint64_t word) const {
        Key k = *this;
        k.state = mix(k.state, word);
        return k;
    }
};

// Uniform in the open interval (0,1); never returns 0 or 1 so it is safe
// inside log().
inline double uniform01(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// One standard normal per counter via Box-Muller (cosine branch only).
inline double normal(const Key& key, std::uint64_t counter) {
    const double u1 = uniform01(mix(key.state, 2 * counter));
    const double u2 = uniform01(mix(key.state, 2 * counter + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline Eigen::VectorXd normal_vector(const Key& key, int d) {
    Eigen::VectorXd z(d);
    for (int i = 0; i < d; ++i) z[i] = normal(key, static_cast<std::uint64_t>(i));
    return z;
}

// Stream tags so unrelated draws can never collide.
enum Stream : std::uint64_t {
    kInitState = 1,
    kBlockNoise = 2,
    kMomentum = 3,
    kCorrectorNoise = 4,
    kPerturbation = 5,
    kProjection = 6,
    kScratch = 7,
};

}  // namespace rng
}  // namespace piadm
