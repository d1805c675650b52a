#include "magtrack/field_models.hpp"

#include "magtrack/elliptic.hpp"

#include <cmath>
#include <stdexcept>

namespace magtrack {

MagnetSpec MagnetSpec::sphere(double moment_am2) {
    if (moment_am2 < 0.0 || !std::isfinite(moment_am2))
        throw config_error("MagnetSpec: sphere moment must be finite and >= 0");
    MagnetSpec s;
    s.shape = Shape::Sphere;
    s.moment = moment_am2;
    return s;
}

MagnetSpec MagnetSpec::cylinder(double radius_m, double height_m, double magnetization_apm) {
    if (radius_m <= 0.0 || height_m <= 0.0)
        throw config_error("MagnetSpec: cylinder dimensions must be > 0");
    if (magnetization_apm < 0.0 || !std::isfinite(magnetization_apm))
        throw config_error("MagnetSpec: magnetization must be finite and >= 0");
    MagnetSpec s;
    s.shape = Shape::Cylinder;
    s.radius = radius_m;
    s.height = height_m;
    s.magnetization = magnetization_apm;
    return s;
}

bool MagnetSpec::inside_body(double du, double dw, double margin) const {
    if (shape == Shape::Sphere) return false;
    return du < radius + margin && std::abs(dw) < 0.5 * height + margin;
}

FieldVector dipole_field(const Vec3& moment, const Vec3& r) {
    const double dist = r.norm();
    if (dist < kDipoleSingularityFloor)
        throw std::domain_error("dipole_field: evaluation point within singularity floor");
    const double inv_r = 1.0 / dist;
    const double inv_r3 = inv_r * inv_r * inv_r;
    const double inv_r5 = inv_r3 * inv_r * inv_r;
    return kMu0Over4Pi * (3.0 * moment.dot(r) * inv_r5 * r - inv_r3 * moment);
}

double equivalent_dipole_moment(const MagnetSpec& spec) {
    if (spec.shape == MagnetSpec::Shape::Sphere) return spec.moment;
    return spec.magnetization * M_PI * spec.radius * spec.radius * spec.height;
}

std::pair<double, double> sphere_field_2d(double moment, double du, double dw) {
    const double r2 = du * du + dw * dw;
    const double r = std::sqrt(r2);
    if (r < kDipoleSingularityFloor)
        throw std::domain_error("sphere_field_2d: evaluation point within singularity floor");
    const double inv_r5 = 1.0 / (r2 * r2 * r);
    const double bu = kMu0Over4Pi * 3.0 * moment * du * dw * inv_r5;
    const double bw = kMu0Over4Pi * moment * (2.0 * dw * dw - du * du) * inv_r5;
    return {bu, bw};
}

std::pair<double, double> cylinder_field_2d(const MagnetSpec& spec, double du, double dw) {
    if (spec.shape != MagnetSpec::Shape::Cylinder)
        throw std::invalid_argument("cylinder_field_2d: spec is not a cylinder");
    if (du < 0.0) throw std::invalid_argument("cylinder_field_2d: du must be >= 0");
    if (spec.inside_body(du, dw))
        throw std::domain_error("cylinder_field_2d: point inside magnet body");

    const double a = spec.radius;
    const double b = 0.5 * spec.height;
    // The surface-current sheet sits at rho = a; nudge exactly-coincident
    // queries off it so gamma stays nonzero (field is smooth there for |z|>b).
    double rho = du;
    if (std::abs(rho - a) < 1e-9 * a) rho = a * (rho < a ? (1.0 - 1e-9) : (1.0 + 1e-9));

    const double zp = dw + b;
    const double zm = dw - b;
    const double sum2 = (rho + a) * (rho + a);
    const double dif2 = (rho - a) * (rho - a);
    const double den_p = std::sqrt(zp * zp + sum2);
    const double den_m = std::sqrt(zm * zm + sum2);
    const double kc_p2 = (zp * zp + dif2) / (zp * zp + sum2);
    const double kc_m2 = (zm * zm + dif2) / (zm * zm + sum2);
    if (kc_p2 < 1e-24 || kc_m2 < 1e-24)
        throw std::domain_error("cylinder_field_2d: point on the singular edge ring");
    const double kc_p = std::sqrt(kc_p2);
    const double kc_m = std::sqrt(kc_m2);
    const double gamma = (a - rho) / (a + rho);

    const double b0 = (4.0 * M_PI * kMu0Over4Pi) * spec.magnetization / M_PI; // mu0*M/pi
    const double alpha_p = a / den_p;
    const double alpha_m = a / den_m;
    const double beta_p = zp / den_p;
    const double beta_m = zm / den_m;

    const double brho = b0 * (alpha_p * bulirsch_cel(kc_p, 1.0, 1.0, -1.0) -
                              alpha_m * bulirsch_cel(kc_m, 1.0, 1.0, -1.0));
    const double bz = b0 * a / (a + rho) *
                      (beta_p * bulirsch_cel(kc_p, gamma * gamma, 1.0, gamma) -
                       beta_m * bulirsch_cel(kc_m, gamma * gamma, 1.0, gamma));
    return {brho, bz};
}

std::pair<double, double> magnet_field_2d(const MagnetSpec& spec, double du, double dw) {
    if (spec.shape == MagnetSpec::Shape::Sphere) return sphere_field_2d(spec.moment, du, dw);
    return cylinder_field_2d(spec, du, dw);
}

} // namespace magtrack
