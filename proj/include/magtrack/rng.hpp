#pragma once

#include "magtrack/types.hpp"

#include <cstdint>
#include <random>

namespace magtrack {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded random stream. Substreams are derived by hashing (seed, index, salt)
/// so that per-sample generation is reproducible regardless of evaluation
/// order or parallelism.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    static RngStream substream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
        return RngStream(splitmix64(seed ^ splitmix64(index ^ splitmix64(salt))));
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(engine_); }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform direction on the unit sphere.
    Vec3 unit_vector() {
        const double z = uniform(-1.0, 1.0);
        const double phi = uniform(0.0, 2.0 * M_PI);
        const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        return Vec3(s * std::cos(phi), s * std::sin(phi), z);
    }

    Vec3 in_box(const Box& box) {
        return Vec3(uniform(box.lo.x(), box.hi.x()),
                    uniform(box.lo.y(), box.hi.y()),
                    uniform(box.lo.z(), box.hi.z()));
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace magtrack
