#pragma once

#include "magtrack/rng.hpp"
#include "magtrack/synth.hpp"
#include "magtrack/types.hpp"

#include <functional>
#include <vector>

namespace magtrack {

struct OptConfig {
    int max_iter = 50;
    int memory = 10;        // L-BFGS history length
    double grad_tol = 1e-12; // infinity norm of the gradient
    double armijo_c = 1e-4;
    double ls_shrink = 0.5;
    int ls_max_trials = 25;
};

struct LbfgsResult {
    VecX x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;         // gradient tolerance reached
    bool line_search_failed = false; // no acceptable step; x is the best seen
};

/// Objective with optional gradient: fills *grad when non-null.
using ObjectiveFn = std::function<double(const VecX&, VecX*)>;

/// Limited-memory BFGS with two-loop recursion and Armijo backtracking.
/// Accepted objective values are non-increasing.
LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, const VecX& x0, const OptConfig& cfg);

/// Least-squares residual between dipole-model predictions and an array
/// reading: params are [p; o], the moment is moment_scale * o/|o|.
/// Distances below the singularity floor are clamped, which keeps the
/// objective finite along any line-search path.
double dipole_objective(const VecX& params, const VecX& readings, const SensorArray& array,
                        double moment_scale, VecX* grad);

VecX pose_to_params(const Pose& pose);
Pose params_to_pose(const VecX& params);

/// Position moved by exactly `dp` in a uniform random direction; orientation
/// rotated by exactly `dtheta_deg` about a uniform random axis perpendicular
/// to it.
Pose perturb_pose(const Pose& pose, double dp, double dtheta_deg, RngStream& rng);

struct TrackStep {
    Pose estimate;
    int iterations = 0;
    bool accepted = false; // optimized position fell inside the interactive space
    double objective = 0.0;
};

struct TrackResult {
    std::vector<TrackStep> steps;
};

/// Frame-by-frame tracking: each step starts from the previous estimate;
/// solutions leaving the interactive space are rejected and the previous
/// estimate carried forward.
TrackResult track_trajectory(const std::vector<VecX>& readings, const Pose& init,
                             const Box& interactive_space, const SensorArray& array,
                             double moment_scale, const OptConfig& cfg);

} // namespace magtrack
