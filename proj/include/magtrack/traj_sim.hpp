#pragma once

#include "magtrack/rng.hpp"
#include "magtrack/synth.hpp"
#include "magtrack/types.hpp"

#include <cstdint>
#include <vector>

namespace magtrack {

/// Random smooth trajectory: sparse waypoints joined by interpolation, with
/// steps per joint proportional to a virtual distance mixing translation and
/// rotation.
struct TrajConfig {
    int n_total = 10000;  // emitted poses
    int n_sample = 179;   // waypoints
    double lambda = 0.0776; // m per radian in the virtual distance
    double frequency = 40.0; // Hz, pose rate

    void validate() const;
};

struct Trajectory {
    std::vector<double> t; // seconds, uniform at 1/frequency
    std::vector<Pose> poses;

    int size() const { return static_cast<int>(poses.size()); }
};

Trajectory generate_trajectory(const TrajConfig& cfg, const Box& volume, RngStream& rng);

/// Largest-remainder apportionment of `units` among weights: allocations are
/// proportional up to rounding, sum to `units`, and never order-invert the
/// weights. Ties go to the earlier index.
std::vector<int> allocate_largest_remainder(const std::vector<double>& weights, int units);

/// Spherical interpolation between unit directions; s in [0, 1]. The result
/// stays unit length and the swept angle is s times the full angle.
Vec3 slerp_dir(const Vec3& a, const Vec3& b, double s);

/// Pose at an arbitrary time: linear in position, slerp in orientation,
/// clamped to the first/last pose outside the time range.
Pose interpolate_pose(const Trajectory& traj, double time);

/// Anisotropic white sensor noise plus a slowly drifting background offset
/// shared by every sensor.
struct NoiseConfig {
    double sigma_xy = 6.0e-7; // T
    double sigma_z = 9.66e-7; // T
    Vec3 drift_std = Vec3(1.51e-6, 1.99e-6, 1.01e-6); // T per axis
    int drift_period = 1000;  // steps between offset redraws

    void validate() const;
};

class NoiseModel {
public:
    NoiseModel(const NoiseConfig& cfg, std::uint64_t seed);

    /// Adds noise and the current drift offset to one array reading
    /// (3n values) and advances the step counter.
    VecX apply(const VecX& readings);

    const Vec3& drift_offset() const { return drift_; }
    /// Pins the drift offset, disabling redraws; for controlled simulations.
    void set_drift_offset(const Vec3& offset);

private:
    NoiseConfig cfg_;
    RngStream rng_;
    Vec3 drift_ = Vec3::Zero();
    long step_ = 0;
    bool pinned_ = false;
};

/// Per-step array readings where sensor k samples the trajectory at
/// t + k/(n-1) * t_reading, modelling a sequential hardware scan. Times past
/// the trajectory end clamp to the final pose.
std::vector<VecX> simulate_async_readings(const Trajectory& traj, const SensorArray& array,
                                          const FieldSource2D& source, double t_reading,
                                          RngStream& rng);

struct ErrorStats {
    double mean = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

struct TrackingErrors {
    ErrorStats position_mm;
    ErrorStats angle_deg;
};

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile_linear(std::vector<double> values, double q);

TrackingErrors summarize_errors(const std::vector<Pose>& truth,
                                const std::vector<Pose>& estimates);

} // namespace magtrack
