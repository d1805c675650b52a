#pragma once

#include "magtrack/field_map.hpp"
#include "magtrack/field_models.hpp"
#include "magtrack/rng.hpp"
#include "magtrack/types.hpp"

#include <utility>
#include <vector>

namespace magtrack {

/// Fixed set of tri-axis sensor positions, all sharing the world frame.
struct SensorArray {
    std::vector<Vec3> positions;

    int count() const { return static_cast<int>(positions.size()); }

    /// 4x4 planar grid at z = 0, centered on the origin.
    static SensorArray grid_4x4(double spacing = 0.052);

    /// Nested subset of the 4x4 grid preserving symmetry about the center:
    /// 4 corners, +4 inner, +4 edge midpoints, or all 16. Element order
    /// follows the row-major order of the full grid.
    SensorArray subset(int count) const;

    void validate() const;
};

/// Source of the magnet's meridional field, either analytic or a precomputed
/// map. Both return (B_u, B_w) for cylindrical offsets (du, dw).
class FieldSource2D {
public:
    virtual ~FieldSource2D() = default;
    virtual std::pair<double, double> field(double du, double dw) const = 0;
    virtual const MagnetSpec& spec() const = 0;
};

class AnalyticSource2D final : public FieldSource2D {
public:
    explicit AnalyticSource2D(const MagnetSpec& spec) : spec_(spec) {}
    std::pair<double, double> field(double du, double dw) const override {
        return magnet_field_2d(spec_, du, dw);
    }
    const MagnetSpec& spec() const override { return spec_; }

private:
    MagnetSpec spec_;
};

/// Holds a reference: the map must outlive the source.
class MapSource2D final : public FieldSource2D {
public:
    explicit MapSource2D(const FieldMap2D& map) : map_(&map) {}
    std::pair<double, double> field(double du, double dw) const override {
        return map_->sample(du, dw);
    }
    const MagnetSpec& spec() const override { return map_->spec(); }

private:
    const FieldMap2D* map_;
};

/// Field of one axially magnetized magnet at one sensor, computed by rotating
/// the sensor offset into the magnet's meridional plane, evaluating the 2D
/// source there, and rotating the components back to the world frame. The rng
/// is consumed only when the offset is (nearly) parallel to the magnet axis,
/// where the in-plane direction is arbitrary and drawn at random.
Vec3 synthesize_reading(const Pose& pose, const Vec3& sensor, const FieldSource2D& source,
                        RngStream& rng);

/// All sensors of the array, concatenated as [x0 y0 z0 x1 y1 z1 ...].
VecX synthesize_array(const Pose& pose, const SensorArray& array, const FieldSource2D& source,
                      RngStream& rng);

} // namespace magtrack
