#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace magtrack {

using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// 5-DoF state of an axisymmetric magnet: position [m] and the unit
/// magnetic-moment direction in device coordinates.
struct Pose {
    Vec3 p = Vec3::Zero();
    Vec3 o = Vec3::UnitZ();
};

inline bool is_unit(const Vec3& v, double tol = 1e-9) {
    return std::abs(v.norm() - 1.0) <= tol;
}

/// Angle between two directions in degrees, clamped against rounding.
inline double angle_between_deg(const Vec3& a, const Vec3& b) {
    const double denom = a.norm() * b.norm();
    if (denom == 0.0) throw std::invalid_argument("angle_between_deg: zero-length vector");
    const double c = std::clamp(a.dot(b) / denom, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

/// Axis-aligned box, used for the sampling volume and the interactive space.
struct Box {
    Vec3 lo = Vec3(-0.1, -0.1, 0.0);
    Vec3 hi = Vec3(0.1, 0.1, 0.15);

    bool contains(const Vec3& x) const {
        return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
    }
    Vec3 extent() const { return hi - lo; }
    bool valid() const { return (extent().array() > 0.0).all(); }
};

// Error categories surfaced at the CLI as exit codes.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace magtrack
