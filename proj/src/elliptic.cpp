#include "magtrack/elliptic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace magtrack {

namespace {
// Duplication-loop cutoffs; the remainder series then contributes O(eps^6),
// which keeps the absolute error near 1e-14 in double precision.
constexpr double kRfErrtol = 0.0025;
constexpr double kRdErrtol = 0.0015;
constexpr double kRcErrtol = 0.0012;
constexpr double kRjErrtol = 0.0015;
constexpr int kMaxIter = 200;
} // namespace

double carlson_rf(double x, double y, double z) {
    if (x < 0.0 || y < 0.0 || z < 0.0 || (x + y) == 0.0 || (y + z) == 0.0 || (x + z) == 0.0)
        throw std::domain_error("carlson_rf: invalid arguments");
    double mu = 0.0, dx = 0.0, dy = 0.0, dz = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
        const double sx = std::sqrt(x), sy = std::sqrt(y), sz = std::sqrt(z);
        const double lam = sx * (sy + sz) + sy * sz;
        x = 0.25 * (x + lam);
        y = 0.25 * (y + lam);
        z = 0.25 * (z + lam);
        mu = (x + y + z) / 3.0;
        dx = (mu - x) / mu;
        dy = (mu - y) / mu;
        dz = (mu - z) / mu;
        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) < kRfErrtol) break;
    }
    const double e2 = dx * dy - dz * dz;
    const double e3 = dx * dy * dz;
    return (1.0 + (e2 / 24.0 - 0.1 - 3.0 * e3 / 44.0) * e2 + e3 / 14.0) / std::sqrt(mu);
}

double carlson_rd(double x, double y, double z) {
    if (x < 0.0 || y < 0.0 || (x + y) == 0.0 || z <= 0.0)
        throw std::domain_error("carlson_rd: invalid arguments");
    constexpr double c1 = 3.0 / 14.0, c2 = 1.0 / 6.0, c3 = 9.0 / 22.0, c4 = 3.0 / 26.0;
    constexpr double c5 = 0.25 * c3, c6 = 1.5 * c4;
    double sum = 0.0, fac = 1.0;
    double mu = 0.0, dx = 0.0, dy = 0.0, dz = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
        const double sx = std::sqrt(x), sy = std::sqrt(y), sz = std::sqrt(z);
        const double lam = sx * (sy + sz) + sy * sz;
        sum += fac / (sz * (z + lam));
        fac *= 0.25;
        x = 0.25 * (x + lam);
        y = 0.25 * (y + lam);
        z = 0.25 * (z + lam);
        mu = 0.2 * (x + y + 3.0 * z);
        dx = (mu - x) / mu;
        dy = (mu - y) / mu;
        dz = (mu - z) / mu;
        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) < kRdErrtol) break;
    }
    const double ea = dx * dy;
    const double eb = dz * dz;
    const double ec = ea - eb;
    const double ed = ea - 6.0 * eb;
    const double ee = ed + ec + ec;
    return 3.0 * sum +
           fac *
               (1.0 + ed * (-c1 + c5 * ed - c6 * dz * ee) +
                dz * (c2 * ee + dz * (-c3 * ec + dz * c4 * ea))) /
               (mu * std::sqrt(mu));
}

double carlson_rc(double x, double y) {
    if (x < 0.0 || y <= 0.0) throw std::domain_error("carlson_rc: invalid arguments");
    constexpr double c1 = 0.3, c2 = 1.0 / 7.0, c3 = 0.375, c4 = 9.0 / 22.0;
    double mu = 0.0, s = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
        const double lam = 2.0 * std::sqrt(x) * std::sqrt(y) + y;
        x = 0.25 * (x + lam);
        y = 0.25 * (y + lam);
        mu = (x + y + y) / 3.0;
        s = (y - mu) / mu;
        if (std::abs(s) < kRcErrtol) break;
    }
    return (1.0 + s * s * (c1 + s * (c2 + s * (c3 + s * c4)))) / std::sqrt(mu);
}

double carlson_rj(double x, double y, double z, double p) {
    if (x < 0.0 || y < 0.0 || z < 0.0 || p <= 0.0 ||
        (x + y) == 0.0 || (y + z) == 0.0 || (x + z) == 0.0)
        throw std::domain_error("carlson_rj: invalid arguments");
    constexpr double c1 = 3.0 / 14.0, c2 = 1.0 / 3.0, c3 = 3.0 / 22.0, c4 = 3.0 / 26.0;
    constexpr double c5 = 0.75 * c3, c6 = 1.5 * c4, c7 = 0.5 * c2, c8 = c3 + c3;
    double sum = 0.0, fac = 1.0;
    double mu = 0.0, dx = 0.0, dy = 0.0, dz = 0.0, dp = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
        const double sx = std::sqrt(x), sy = std::sqrt(y), sz = std::sqrt(z);
        const double lam = sx * (sy + sz) + sy * sz;
        const double alpha_sq = std::pow(p * (sx + sy + sz) + sx * sy * sz, 2);
        const double beta = p * (p + lam) * (p + lam);
        sum += fac * carlson_rc(alpha_sq, beta);
        fac *= 0.25;
        x = 0.25 * (x + lam);
        y = 0.25 * (y + lam);
        z = 0.25 * (z + lam);
        p = 0.25 * (p + lam);
        mu = 0.2 * (x + y + z + 2.0 * p);
        dx = (mu - x) / mu;
        dy = (mu - y) / mu;
        dz = (mu - z) / mu;
        dp = (mu - p) / mu;
        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz), std::abs(dp)}) < kRjErrtol) break;
    }
    const double ea = dx * (dy + dz) + dy * dz;
    const double eb = dx * dy * dz;
    const double ec = dp * dp;
    const double ed = ea - 3.0 * ec;
    const double ee = eb + 2.0 * dp * (ea - ec);
    return 3.0 * sum +
           fac *
               (1.0 + ed * (-c1 + c5 * ed - c6 * ee) + eb * (c7 + dp * (-c8 + dp * c4)) +
                dp * ea * (c2 - dp * c3) - c2 * dp * ec) /
               (mu * std::sqrt(mu));
}

double bulirsch_cel(double kc, double p, double a, double b) {
    if (kc == 0.0) throw std::domain_error("bulirsch_cel: kc must be nonzero");
    if (p <= 0.0) throw std::domain_error("bulirsch_cel: p must be positive");
    const double kc2 = kc * kc;
    return a * carlson_rf(0.0, kc2, 1.0) + (b - p * a) / 3.0 * carlson_rj(0.0, kc2, 1.0, p);
}

double ellint_k(double m) {
    if (m < 0.0 || m >= 1.0) throw std::domain_error("ellint_k: m must be in [0,1)");
    return carlson_rf(0.0, 1.0 - m, 1.0);
}

double ellint_e(double m) {
    if (m < 0.0 || m > 1.0) throw std::domain_error("ellint_e: m must be in [0,1]");
    if (m == 1.0) return 1.0;
    return carlson_rf(0.0, 1.0 - m, 1.0) - m / 3.0 * carlson_rd(0.0, 1.0 - m, 1.0);
}

} // namespace magtrack
