#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace hvrnn::rng {

// SplitMix64 finalizer. All randomness in the project derives from this mix,
// applied to (key, counter) pairs, so every stream is reproducible from
// integers alone and independent of call order.
inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// Order-free derivation of sub-stream keys.
inline std::uint64_t derive(std::uint64_t key, std::uint64_t salt) {
    return mix64(key + kGolden * (salt + 1));
}

inline std::uint64_t derive(std::uint64_t key, std::uint64_t a, std::uint64_t b) {
    return derive(derive(key, a), b);
}

inline std::uint64_t derive(std::uint64_t key, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return derive(derive(key, a, b), c);
}

// Counter-based generator: value i of stream `key` is mix64(key + GOLDEN*(i+1)).
// Pure integer state, so sequences are identical across platforms.
class Counter {
public:
    explicit Counter(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() { return mix64(key_ + kGolden * (++ctr_)); }

    // 53-bit uniform in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller pair of standard normals.
    std::pair<double, double> gaussian_pair() {
        double u1 = 1.0 - uniform01();  // (0, 1]
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        auto [a, b] = gaussian_pair();
        spare_ = b;
        have_spare_ = true;
        return a;
    }

    // Random unit vector by rejection from the square. Uses only +,*,/ and
    // sqrt (all IEEE-exact), so trajectories built from it are bit-identical
    // across machines.
    std::pair<double, double> unit_vec2() {
        for (;;) {
            double x = uniform(-1.0, 1.0);
            double y = uniform(-1.0, 1.0);
            double r2 = x * x + y * y;
            if (r2 > 1e-4 && r2 <= 1.0) {
                double inv = 1.0 / std::sqrt(r2);
                return {x * inv, y * inv};
            }
        }
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return ctr_; }

private:
    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace hvrnn::rng
