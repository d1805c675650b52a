#include "magtrack/traj_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace magtrack {

void TrajConfig::validate() const {
    if (n_sample < 2) {
        throw config_error("trajectory: need at least two waypoints");
    }
    if (n_total < n_sample) {
        throw config_error("trajectory: total poses must be at least the waypoint count");
    }
    if (lambda < 0.0 || !(frequency > 0.0)) {
        throw config_error("trajectory: lambda must be >= 0 and frequency > 0");
    }
}

Vec3 slerp_dir(const Vec3& a, const Vec3& b, double s) {
    const Vec3 an = a.normalized();
    const Vec3 bn = b.normalized();
    const double dot = std::clamp(an.dot(bn), -1.0, 1.0);
    const double omega = std::acos(dot);
    const double sin_omega = std::sin(omega);
    if (sin_omega < 1e-9) {
        if (dot > 0.0) {
            // Nearly identical directions: linear blend is exact enough.
            return (an + s * (bn - an)).normalized();
        }
        // Antipodal: the great circle is ambiguous, pick a stable one.
        Vec3 ref = std::abs(an.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        const Vec3 axis = an.cross(ref).normalized();
        const double th = s * M_PI;
        return (std::cos(th) * an + std::sin(th) * axis.cross(an)).normalized();
    }
    return ((std::sin((1.0 - s) * omega) * an + std::sin(s * omega) * bn) / sin_omega)
        .normalized();
}

std::vector<int> allocate_largest_remainder(const std::vector<double>& weights, int units) {
    if (weights.empty()) {
        throw std::invalid_argument("allocate: need at least one weight");
    }
    if (units < 0) {
        throw std::invalid_argument("allocate: units must be non-negative");
    }
    const int n = static_cast<int>(weights.size());
    std::vector<int> alloc(weights.size(), 0);
    if (units == 0) {
        return alloc;
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            throw std::invalid_argument("allocate: weights must be non-negative");
        }
        total += w;
    }
    if (total <= 0.0) {
        // Degenerate weights: spread units round-robin.
        for (int e = 0; e < units; ++e) {
            ++alloc[static_cast<std::size_t>(e % n)];
        }
        return alloc;
    }
    std::vector<double> frac(weights.size());
    int assigned = 0;
    for (int j = 0; j < n; ++j) {
        const double share = units * weights[static_cast<std::size_t>(j)] / total;
        const int whole = static_cast<int>(std::floor(share));
        alloc[static_cast<std::size_t>(j)] = whole;
        frac[static_cast<std::size_t>(j)] = share - whole;
        assigned += whole;
    }
    std::vector<int> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return frac[static_cast<std::size_t>(a)] > frac[static_cast<std::size_t>(b)];
    });
    for (int e = 0; e < units - assigned; ++e) {
        ++alloc[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])];
    }
    return alloc;
}

Trajectory generate_trajectory(const TrajConfig& cfg, const Box& volume, RngStream& rng) {
    cfg.validate();
    if (!volume.valid()) {
        throw config_error("trajectory: invalid volume");
    }

    std::vector<Pose> waypoints(static_cast<std::size_t>(cfg.n_sample));
    for (Pose& w : waypoints) {
        w.p = rng.in_box(volume);
        w.o = rng.unit_vector();
    }

    const int n_seg = cfg.n_sample - 1;
    std::vector<double> virt(static_cast<std::size_t>(n_seg));
    double total_virt = 0.0;
    for (int j = 0; j < n_seg; ++j) {
        const Pose& a = waypoints[static_cast<std::size_t>(j)];
        const Pose& b = waypoints[static_cast<std::size_t>(j) + 1];
        const double angle = angle_between_deg(a.o, b.o) * M_PI / 180.0;
        virt[static_cast<std::size_t>(j)] = (b.p - a.p).norm() + cfg.lambda * angle;
        total_virt += virt[static_cast<std::size_t>(j)];
    }

    // One step per segment guaranteed; the remainder is apportioned by the
    // largest-remainder rule on the virtual distances.
    const int extra = cfg.n_total - cfg.n_sample;
    std::vector<int> steps = allocate_largest_remainder(virt, extra);
    for (int& k : steps) {
        ++k;
    }

    Trajectory traj;
    traj.poses.reserve(static_cast<std::size_t>(cfg.n_total));
    traj.poses.push_back(waypoints.front());
    for (int j = 0; j < n_seg; ++j) {
        const Pose& a = waypoints[static_cast<std::size_t>(j)];
        const Pose& b = waypoints[static_cast<std::size_t>(j) + 1];
        const int k = steps[static_cast<std::size_t>(j)];
        for (int i = 1; i <= k; ++i) {
            const double s = static_cast<double>(i) / k;
            Pose pose;
            pose.p = a.p + s * (b.p - a.p);
            pose.o = slerp_dir(a.o, b.o, s);
            traj.poses.push_back(pose);
        }
    }

    traj.t.resize(traj.poses.size());
    for (std::size_t i = 0; i < traj.t.size(); ++i) {
        traj.t[i] = static_cast<double>(i) / cfg.frequency;
    }
    return traj;
}

Pose interpolate_pose(const Trajectory& traj, double time) {
    if (traj.poses.empty()) {
        throw std::invalid_argument("interpolate_pose: empty trajectory");
    }
    if (time <= traj.t.front()) {
        return traj.poses.front();
    }
    if (time >= traj.t.back()) {
        return traj.poses.back();
    }
    const auto it = std::upper_bound(traj.t.begin(), traj.t.end(), time);
    const std::size_t hi = static_cast<std::size_t>(it - traj.t.begin());
    const std::size_t lo = hi - 1;
    const double span = traj.t[hi] - traj.t[lo];
    const double s = span > 0.0 ? (time - traj.t[lo]) / span : 0.0;
    Pose pose;
    pose.p = traj.poses[lo].p + s * (traj.poses[hi].p - traj.poses[lo].p);
    pose.o = slerp_dir(traj.poses[lo].o, traj.poses[hi].o, s);
    return pose;
}

void NoiseConfig::validate() const {
    if (sigma_xy < 0.0 || sigma_z < 0.0 || (drift_std.array() < 0.0).any()) {
        throw config_error("noise: standard deviations must be non-negative");
    }
    if (drift_period < 1) {
        throw config_error("noise: drift period must be at least 1 step");
    }
}

NoiseModel::NoiseModel(const NoiseConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
    cfg.validate();
}

void NoiseModel::set_drift_offset(const Vec3& offset) {
    drift_ = offset;
    pinned_ = true;
}

VecX NoiseModel::apply(const VecX& readings) {
    if (readings.size() % 3 != 0 || readings.size() == 0) {
        throw std::invalid_argument("noise: reading length must be a positive multiple of 3");
    }
    if (!pinned_ && step_ % cfg_.drift_period == 0) {
        drift_ = Vec3(rng_.normal(0.0, cfg_.drift_std.x()), rng_.normal(0.0, cfg_.drift_std.y()),
                      rng_.normal(0.0, cfg_.drift_std.z()));
    }
    ++step_;

    VecX out = readings;
    const int n = static_cast<int>(readings.size() / 3);
    for (int k = 0; k < n; ++k) {
        out[3 * k + 0] += rng_.normal(0.0, cfg_.sigma_xy) + drift_.x();
        out[3 * k + 1] += rng_.normal(0.0, cfg_.sigma_xy) + drift_.y();
        out[3 * k + 2] += rng_.normal(0.0, cfg_.sigma_z) + drift_.z();
    }
    return out;
}

std::vector<VecX> simulate_async_readings(const Trajectory& traj, const SensorArray& array,
                                          const FieldSource2D& source, double t_reading,
                                          RngStream& rng) {
    if (t_reading < 0.0) {
        throw std::invalid_argument("simulate_async_readings: t_reading must be >= 0");
    }
    array.validate();
    const int n = array.count();
    std::vector<VecX> frames;
    frames.reserve(traj.poses.size());
    for (std::size_t i = 0; i < traj.poses.size(); ++i) {
        VecX frame(3 * n);
        for (int k = 0; k < n; ++k) {
            const double offset = n > 1 ? static_cast<double>(k) / (n - 1) * t_reading : 0.0;
            const Pose pose = interpolate_pose(traj, traj.t[i] + offset);
            frame.segment<3>(3 * k) =
                synthesize_reading(pose, array.positions[static_cast<std::size_t>(k)], source, rng);
        }
        frames.push_back(std::move(frame));
    }
    return frames;
}

double quantile_linear(std::vector<double> values, double q) {
    if (values.empty()) {
        throw std::invalid_argument("quantile: empty sample");
    }
    if (q < 0.0 || q > 1.0) {
        throw std::invalid_argument("quantile: q must be in [0, 1]");
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) {
        return values.back();
    }
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

TrackingErrors summarize_errors(const std::vector<Pose>& truth,
                                const std::vector<Pose>& estimates) {
    if (truth.size() != estimates.size() || truth.empty()) {
        throw std::invalid_argument("summarize_errors: sequences must be non-empty and equal");
    }
    std::vector<double> ep(truth.size()), eth(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ep[i] = (truth[i].p - estimates[i].p).norm() * 1e3;
        eth[i] = angle_between_deg(truth[i].o, estimates[i].o);
    }
    auto stats = [](const std::vector<double>& v) {
        ErrorStats s;
        s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        s.median = quantile_linear(v, 0.5);
        s.q3 = quantile_linear(v, 0.75);
        s.max = *std::max_element(v.begin(), v.end());
        return s;
    };
    TrackingErrors errors;
    errors.position_mm = stats(ep);
    errors.angle_deg = stats(eth);
    return errors;
}

} // namespace magtrack
