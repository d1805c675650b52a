#pragma once

#include "magtrack/synth.hpp"
#include "magtrack/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace magtrack {

/// Controls random pose generation for training and evaluation data.
struct SamplerConfig {
    Box volume;                 // positions drawn uniformly from this box
    double body_margin = 5e-4;  // m, poses placing a sensor this close to the body are redrawn
    int max_attempts = 1000;
};

/// Uniform pose: position uniform in the volume, orientation uniform on the
/// sphere. Redraws while any sensor lies inside the margin-dilated magnet
/// body; throws config_error when max_attempts is exhausted.
Pose sample_pose(const SamplerConfig& cfg, const MagnetSpec& spec, const SensorArray& array,
                 RngStream& rng);

/// True when any sensor of the array falls inside the margin-dilated magnet
/// body for this pose.
bool pose_collides(const Pose& pose, const MagnetSpec& spec, const SensorArray& array,
                   double margin);

/// Elementwise signed cube root, the feature transform applied to raw field
/// readings before the network input.
VecX feature_engineer(const VecX& readings);

struct Sample {
    VecX raw;      // 3n raw field components, tesla
    VecX features; // signed cube root of raw
    Pose label;
};

enum class SourceKind : std::uint8_t { Dipole = 0, FemSurrogate = 1 };

std::string to_string(SourceKind kind);
SourceKind source_kind_from_string(const std::string& name);

struct Dataset {
    std::vector<Sample> samples;
    MagnetSpec spec;
    SensorArray array;
    SourceKind source = SourceKind::Dipole;
    std::uint64_t seed = 0;
    Box volume;

    int count() const { return static_cast<int>(samples.size()); }
    int input_dim() const { return 3 * array.count(); }
};

/// Generates count samples. Sample i derives its pose and synthesis rng from
/// substreams keyed by (seed, i), so regeneration with the same seed is
/// bit-identical and independent of count.
Dataset generate_dataset(int count, const MagnetSpec& spec, const SensorArray& array,
                         const FieldSource2D& source, SourceKind source_kind,
                         const SamplerConfig& cfg, std::uint64_t seed);

/// Binary record file plus a JSON sidecar (path + ".json") describing the
/// generation parameters.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Human-readable export: one row per sample with raw readings and label.
void export_dataset_csv(const Dataset& data, const std::string& path);

} // namespace magtrack
