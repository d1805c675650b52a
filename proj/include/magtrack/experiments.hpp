#pragma once

#include "magtrack/dataset.hpp"
#include "magtrack/mlp.hpp"
#include "magtrack/opt_tracker.hpp"
#include "magtrack/synth.hpp"
#include "magtrack/traj_sim.hpp"
#include "magtrack/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace magtrack {

/// JSON-facing magnet description; `to_spec` validates and converts.
struct MagnetConfig {
    std::string shape = "sphere"; // sphere | cylinder
    double moment = 1.6875;       // A*m^2, sphere only
    double radius = 0.0025;       // m, cylinder only
    double height = 0.025;        // m, cylinder only
    double magnetization = 1.05e6; // A/m, cylinder only

    MagnetSpec to_spec() const;
};

struct GenConfig {
    int samples = 1000;
    bool csv = false; // also export the dataset as CSV
};

/// Training source: fresh samples every epoch (generator) or a stored
/// dataset reshuffled per epoch.
struct TrainCommandConfig {
    TrainConfig schedule;
    int samples_per_epoch = 100000;
    int test_samples = 1000;
    std::string mode = "generator"; // generator | dataset
    std::string dataset;            // record file, mode == dataset
};

struct EvalConfig {
    std::string method = "opt"; // opt | mlp
    // Optimizer perturbation sweep: full grid of init offsets x budgets.
    int cases = 100;
    std::vector<double> init_dp = {0.08};           // m
    std::vector<double> init_dtheta = {10.0, 30.0, 90.0, 180.0}; // deg
    std::vector<int> iters = {10, 20, 50};
    // MLP evaluation on freshly generated data.
    int mlp_samples = 1000;
    std::string model;
    bool truth_as_prediction = false; // pipeline check: predictions := labels
    // Optional sensor-count comparison: sensor count -> model path.
    std::map<int, std::string> sensor_sweep;
};

struct TrackCommandConfig {
    std::string method = "opt"; // opt | mlp
    std::string model;          // mlp method
    double init_dp = 0.005;     // m, perturbation of the first pose
    double init_dtheta = 5.0;   // deg
    double t_reading = 0.0;     // s, sequential-scan span; 0 = synchronous
    bool noise = false;         // apply the sensor-noise model
};

struct BenchConfig {
    int reps = 2000; // at least 1000
    std::vector<int> iters = {10, 20, 50};
    std::string model; // optional; untrained weights time identically
};

struct TuneConfig {
    double target_disp_mm = 2.512;
    double target_rot_deg = 1.435;
    int trials = 3; // trajectories averaged per candidate
};

/// One experiment: magnet + array + data source + per-command settings.
/// The MLP input dimension is always derived from the sensor count.
struct ExperimentConfig {
    MagnetConfig magnet;
    int sensors = 16;              // 4 | 8 | 12 | 16
    std::string source = "dipole"; // dipole | fem-surrogate
    Box volume;                    // sampling volume and interactive space
    std::uint64_t seed = 2026;
    std::string output_dir = "out";

    MlpConfig mlp;
    GenConfig gen;
    TrainCommandConfig train;
    EvalConfig eval;
    TrackCommandConfig track;
    BenchConfig bench;
    TuneConfig tune;
    OptConfig opt;
    NoiseConfig noise;
    TrajConfig traj;

    void validate() const; // throws config_error

    MagnetSpec magnet_spec() const;
    SensorArray sensor_array() const;
    /// Field model used for data synthesis: the magnet's equivalent dipole,
    /// or the closed-form surrogate of its true geometry.
    std::unique_ptr<FieldSource2D> make_source() const;
};

/// Parses a config document; unknown keys and type mismatches raise
/// config_error with the offending path.
ExperimentConfig parse_experiment_config(const std::string& json_text);

/// Reads the file (io_error when unreadable), applies dotted-path overrides
/// ("train.epochs=5", values parsed as JSON when possible), then the
/// MAGTRACK_OUTPUT_DIR environment variable. An empty path starts from
/// defaults.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});

/// Full resolved config as pretty-printed JSON, embedded in every report.
std::string resolved_config_json(const ExperimentConfig& cfg);

/// FNV-1a of a file's bytes; reports use it to witness reproducibility.
std::uint64_t file_hash(const std::string& path);

/// Runs `body(0..n-1)` on a small worker pool; results must be written to
/// per-index slots. The first worker exception is rethrown after the join.
void parallel_for(int n, const std::function<void(int)>& body);

// Commands. Each writes its reports under cfg.output_dir and throws
// config_error / io_error / divergence_error on failure.
void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_track(const ExperimentConfig& cfg);
void cmd_bench_time(const ExperimentConfig& cfg);
void cmd_tune_traj(const ExperimentConfig& cfg);

} // namespace magtrack
