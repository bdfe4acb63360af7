#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace skel {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Error categories map to CLI exit codes: config 2, input 3, numeric 4.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One frame of raw observation. Empty frames are only legal as padding.
struct PointFrame {
    std::vector<Vec3> points;
    bool padding = false;

    PointFrame() = default;
    explicit PointFrame(std::vector<Vec3> pts) : points(std::move(pts)) {}
    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// Axis-aligned box in world units. max >= min componentwise after construction.
struct BBox {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    Vec3 extent() const { return max - min; }
    double diagonal() const { return extent().norm(); }

    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }

    // Maps the box to the unit cube; axes with zero extent map to 0.
    Vec3 normalize(const Vec3& p) const {
        Vec3 u;
        const Vec3 e = extent();
        for (int a = 0; a < 3; ++a)
            u[a] = e[a] > 0.0 ? (p[a] - min[a]) / e[a] : 0.0;
        return u;
    }

    Vec3 denormalize(const Vec3& u) const { return min + u.cwiseProduct(extent()); }

    bool operator==(const BBox& o) const { return min == o.min && max == o.max; }
};

// Deterministic RNG. mt19937_64 output is standardized, and the float
// conversions below avoid std::*_distribution, whose sequences are
// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Vec3 unit_vector() {
        while (true) {
            const Vec3 v(normal(), normal(), normal());
            const double n = v.norm();
            if (n > 1e-12) return v / n;
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline double sq(double x) { return x * x; }

}  // namespace skel
