#pragma once

#include "magtrack/types.hpp"

#include <cstdint>
#include <utility>

namespace magtrack {

using FieldVector = Vec3; // (bx, by, bz) in Tesla

constexpr double kMu0Over4Pi = 1e-7;      // T*m/A, exact
constexpr double kDipoleSingularityFloor = 1e-6; // m

/// Axisymmetric magnet: either an ideal dipole sphere given by its moment,
/// or an axially magnetized cylinder given by geometry and magnetization.
struct MagnetSpec {
    enum class Shape : std::uint8_t { Sphere = 0, Cylinder = 1 };

    Shape shape = Shape::Sphere;
    double moment = 0.0;        // A*m^2, Sphere only
    double radius = 0.0;        // m, Cylinder only
    double height = 0.0;        // m, Cylinder only
    double magnetization = 0.0; // A/m, Cylinder only

    static MagnetSpec sphere(double moment_am2);
    static MagnetSpec cylinder(double radius_m, double height_m, double magnetization_apm);

    /// True when (du, dw) in the meridional plane lies strictly inside the body
    /// dilated by `margin`. A sphere spec has no physical extent here; only the
    /// dipole singularity floor applies to it.
    bool inside_body(double du, double dw, double margin = 0.0) const;
};

/// Magnetic flux density of a point dipole with moment `m` at displacement `r`
/// from the dipole:  B = mu0/4pi * [3 r (m.r) / r^5 - m / r^3].
FieldVector dipole_field(const Vec3& moment, const Vec3& r);

/// Equivalent dipole moment: the sphere's stored moment, or M*pi*R^2*h for a
/// cylinder.
double equivalent_dipole_moment(const MagnetSpec& spec);

/// Meridional-plane field (B_u radial, B_w axial) of an ideal dipole of the
/// given moment sitting at the origin, magnetized along +w.
std::pair<double, double> sphere_field_2d(double moment, double du, double dw);

/// Meridional-plane exterior field of an axially magnetized cylinder,
/// evaluated from the equivalent-solenoid model (Derby & Olbert) with
/// generalized complete elliptic integrals. Throws std::domain_error for
/// points inside the body or on the singular edge ring.
std::pair<double, double> cylinder_field_2d(const MagnetSpec& spec, double du, double dw);

/// Meridional field of any magnet spec (dispatches on shape).
std::pair<double, double> magnet_field_2d(const MagnetSpec& spec, double du, double dw);

} // namespace magtrack
