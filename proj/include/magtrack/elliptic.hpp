#pragma once

namespace magtrack {

// Carlson symmetric elliptic integrals, computed by the duplication
// algorithm to an absolute tolerance of ~1e-13.

/// R_F(x,y,z); x,y,z >= 0, at most one zero.
double carlson_rf(double x, double y, double z);

/// R_D(x,y,z) = R_J(x,y,z,z); x,y >= 0, at most one zero, z > 0.
double carlson_rd(double x, double y, double z);

/// R_C(x,y) = R_F(x,y,y); x >= 0, y > 0.
double carlson_rc(double x, double y);

/// R_J(x,y,z,p); x,y,z >= 0, at most one zero, p > 0.
double carlson_rj(double x, double y, double z, double p);

/// Bulirsch's generalized complete elliptic integral
///   cel(kc,p,a,b) = int_0^{pi/2} (a cos^2 t + b sin^2 t) /
///                   ((cos^2 t + p sin^2 t) sqrt(cos^2 t + kc^2 sin^2 t)) dt
/// for kc != 0, p > 0.
double bulirsch_cel(double kc, double p, double a, double b);

/// Complete elliptic integrals of the first/second kind, parameterized by
/// the squared modulus m = k^2 in [0, 1).
double ellint_k(double m);
double ellint_e(double m);

} // namespace magtrack
