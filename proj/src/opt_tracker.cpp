#include "magtrack/opt_tracker.hpp"

#include "magtrack/field_models.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace magtrack {

double dipole_objective(const VecX& params, const VecX& readings, const SensorArray& array,
                        double moment_scale, VecX* grad) {
    const int n = array.count();
    if (params.size() != 6) {
        throw std::invalid_argument("dipole_objective: expected 6 parameters");
    }
    if (readings.size() != 3 * n) {
        throw std::invalid_argument("dipole_objective: reading length does not match the array");
    }
    const Vec3 p = params.head<3>();
    const Vec3 o = params.tail<3>();
    const double o_norm = o.norm();

    Vec3 m = Vec3::Zero();
    if (o_norm >= 1e-12) {
        m = (moment_scale / o_norm) * o;
    }

    const double c = kMu0Over4Pi;
    const double floor2 = kDipoleSingularityFloor * kDipoleSingularityFloor;
    double f = 0.0;
    Vec3 gp = Vec3::Zero();
    Vec3 gm = Vec3::Zero();

    for (int k = 0; k < n; ++k) {
        const Vec3 r = array.positions[static_cast<std::size_t>(k)] - p;
        // Clamp the distance, not the vector: the numerators keep their
        // direction while the singular powers stay bounded.
        const double r2 = std::max(r.squaredNorm(), floor2);
        const double rn = std::sqrt(r2);
        const double inv3 = 1.0 / (r2 * rn);
        const double inv5 = inv3 / r2;
        const double mr = m.dot(r);

        const Vec3 b = c * (3.0 * mr * inv5 * r - inv3 * m);
        const Vec3 d = b - readings.segment<3>(3 * k);
        f += d.squaredNorm();

        if (grad != nullptr) {
            // dB/dr, symmetric; dB/dp = -dB/dr. Exact outside the clamp.
            const Vec3 jr_d = 3.0 * c * inv5 *
                              (mr * d + r * m.dot(d) + m * r.dot(d) -
                               5.0 * mr / r2 * r * r.dot(d));
            gp -= 2.0 * jr_d;
            // dB/dm applied to d.
            gm += 2.0 * c * inv5 * (3.0 * r * r.dot(d) - r2 * d);
        }
    }

    if (grad != nullptr) {
        grad->resize(6);
        grad->head<3>() = gp;
        if (o_norm >= 1e-12) {
            const Vec3 o_hat = o / o_norm;
            // d m / d o = moment_scale (I - o_hat o_hat^T) / |o|.
            grad->tail<3>() = (moment_scale / o_norm) * (gm - o_hat * o_hat.dot(gm));
        } else {
            grad->tail<3>().setZero();
        }
    }
    return f;
}

LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, const VecX& x0, const OptConfig& cfg) {
    if (cfg.max_iter < 0 || cfg.memory < 1 || cfg.ls_max_trials < 1 ||
        !(cfg.ls_shrink > 0.0 && cfg.ls_shrink < 1.0) || !(cfg.armijo_c > 0.0)) {
        throw config_error("lbfgs: invalid configuration");
    }
    const Eigen::Index dim = x0.size();
    LbfgsResult result;
    result.x = x0;

    VecX g(dim);
    double f = fn(result.x, &g);
    result.f = f;

    std::deque<VecX> s_hist, y_hist;
    std::deque<double> rho_hist;
    double gamma = 1.0; // scale of the implicit initial Hessian inverse

    VecX q(dim), x_new(dim), g_new(dim);
    std::vector<double> alpha;

    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
            result.converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        q = g;
        const int h = static_cast<int>(s_hist.size());
        alpha.assign(static_cast<std::size_t>(h), 0.0);
        for (int i = h - 1; i >= 0; --i) {
            alpha[static_cast<std::size_t>(i)] =
                rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
            q -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
        }
        q *= gamma;
        for (int i = 0; i < h; ++i) {
            const double beta =
                rho_hist[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)].dot(q);
            q += (alpha[static_cast<std::size_t>(i)] - beta) * s_hist[static_cast<std::size_t>(i)];
        }
        VecX direction = -q;
        double dir_deriv = direction.dot(g);
        if (!(dir_deriv < 0.0)) {
            // Curvature information went stale; fall back to steepest descent.
            direction = -g;
            dir_deriv = -g.squaredNorm();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            gamma = 1.0;
        }

        // Backtracking Armijo line search; gradient evaluated alongside the
        // objective so an accepted step needs no second evaluation.
        double step = 1.0;
        bool accepted = false;
        double f_new = f;
        for (int trial = 0; trial < cfg.ls_max_trials; ++trial) {
            x_new = result.x + step * direction;
            f_new = fn(x_new, &g_new);
            if (std::isfinite(f_new) && f_new <= f + cfg.armijo_c * step * dir_deriv) {
                accepted = true;
                break;
            }
            step *= cfg.ls_shrink;
        }
        if (!accepted) {
            result.line_search_failed = true;
            break;
        }

        const VecX s = x_new - result.x;
        const VecX y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > cfg.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            gamma = sy / y.squaredNorm();
        } else {
            // A backtracking-only line search does not guarantee positive
            // curvature. A pair that fails the curvature test marks the
            // stored model as unreliable, so restart from an empty history
            // rather than let stale pairs steer later directions. Gamma is
            // kept: it still carries the objective's scale, and the
            // restarted quasi-Newton model rebuilds around it.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        result.x = x_new;
        f = f_new;
        g = g_new;
        result.f = f;
        result.iterations = iter + 1;
    }
    return result;
}

VecX pose_to_params(const Pose& pose) {
    VecX params(6);
    params.head<3>() = pose.p;
    params.tail<3>() = pose.o;
    return params;
}

Pose params_to_pose(const VecX& params) {
    if (params.size() != 6) {
        throw std::invalid_argument("params_to_pose: expected 6 parameters");
    }
    Pose pose;
    pose.p = params.head<3>();
    const Vec3 o = params.tail<3>();
    const double o_norm = o.norm();
    pose.o = o_norm >= 1e-12 ? Vec3(o / o_norm) : Vec3::UnitZ();
    return pose;
}

Pose perturb_pose(const Pose& pose, double dp, double dtheta_deg, RngStream& rng) {
    if (dp < 0.0 || dtheta_deg < 0.0) {
        throw std::invalid_argument("perturb_pose: offsets must be non-negative");
    }
    const double o_norm = pose.o.norm();
    if (o_norm < 1e-12) {
        throw std::invalid_argument("perturb_pose: orientation must be non-zero");
    }
    Pose out;
    out.p = pose.p + dp * rng.unit_vector();

    const Vec3 o = pose.o / o_norm;
    Vec3 axis;
    do {
        const Vec3 t = rng.unit_vector();
        axis = t - t.dot(o) * o;
    } while (axis.norm() < 1e-9);
    axis.normalize();

    const double th = dtheta_deg * M_PI / 180.0;
    // Rodrigues with axis perpendicular to o; the axial term vanishes.
    out.o = (std::cos(th) * o + std::sin(th) * axis.cross(o)).normalized();
    return out;
}

TrackResult track_trajectory(const std::vector<VecX>& readings, const Pose& init,
                             const Box& interactive_space, const SensorArray& array,
                             double moment_scale, const OptConfig& cfg) {
    if (!interactive_space.valid()) {
        throw config_error("track: invalid interactive space");
    }
    if (!(moment_scale > 0.0)) {
        throw config_error("track: moment scale must be positive");
    }
    array.validate();

    TrackResult result;
    result.steps.reserve(readings.size());
    Pose prev = init;
    for (const VecX& frame : readings) {
        auto objective = [&](const VecX& x, VecX* grad) {
            return dipole_objective(x, frame, array, moment_scale, grad);
        };
        const LbfgsResult opt = lbfgs_minimize(objective, pose_to_params(prev), cfg);
        const Pose candidate = params_to_pose(opt.x);

        TrackStep step;
        step.iterations = opt.iterations;
        step.objective = opt.f;
        step.accepted = interactive_space.contains(candidate.p);
        step.estimate = step.accepted ? candidate : prev;
        result.steps.push_back(step);
        prev = step.estimate;
    }
    return result;
}

} // namespace magtrack
