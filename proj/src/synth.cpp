#include "magtrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace magtrack {

namespace {

// Row-major indices into the 4x4 grid for each nested subset tier. Each tier
// of 4 maps onto itself under 90-degree rotation about the array center.
constexpr int kCorners[4] = {0, 3, 12, 15};
constexpr int kInner[4] = {5, 6, 9, 10};
constexpr int kEdges[4] = {1, 7, 14, 8};
constexpr int kRemainder[4] = {2, 4, 11, 13};

} // namespace

SensorArray SensorArray::grid_4x4(double spacing) {
    if (!(spacing > 0.0)) {
        throw config_error("sensor array: spacing must be positive");
    }
    SensorArray array;
    array.positions.reserve(16);
    for (int row = 0; row < 4; ++row) {
        for (int col = 0; col < 4; ++col) {
            const double x = (col - 1.5) * spacing;
            const double y = (row - 1.5) * spacing;
            array.positions.emplace_back(x, y, 0.0);
        }
    }
    return array;
}

SensorArray SensorArray::subset(int count) const {
    if (positions.size() != 16) {
        throw config_error("sensor array: subsets are defined on the full 4x4 grid");
    }
    if (count != 4 && count != 8 && count != 12 && count != 16) {
        throw config_error("sensor array: subset size must be 4, 8, 12 or 16");
    }
    std::vector<int> keep(kCorners, kCorners + 4);
    if (count >= 8) {
        keep.insert(keep.end(), kInner, kInner + 4);
    }
    if (count >= 12) {
        keep.insert(keep.end(), kEdges, kEdges + 4);
    }
    if (count == 16) {
        keep.insert(keep.end(), kRemainder, kRemainder + 4);
    }
    std::sort(keep.begin(), keep.end());

    SensorArray out;
    out.positions.reserve(keep.size());
    for (int i : keep) {
        out.positions.push_back(positions[static_cast<std::size_t>(i)]);
    }
    return out;
}

void SensorArray::validate() const {
    if (positions.empty()) {
        throw config_error("sensor array: needs at least one sensor");
    }
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            if ((positions[i] - positions[j]).norm() < 1e-12) {
                throw config_error("sensor array: duplicate sensor positions");
            }
        }
    }
}

Vec3 synthesize_reading(const Pose& pose, const Vec3& sensor, const FieldSource2D& source,
                        RngStream& rng) {
    const double o_norm = pose.o.norm();
    if (o_norm < 1e-12) {
        throw std::invalid_argument("synthesize_reading: pose orientation must be non-zero");
    }
    const Vec3 w = pose.o / o_norm;

    const Vec3 pd = pose.p - sensor;
    const double pd_norm = pd.norm();
    if (pd_norm < kDipoleSingularityFloor) {
        throw std::domain_error("synthesize_reading: sensor coincides with the magnet position");
    }

    Vec3 v = w.cross(pd);
    if (v.norm() < 1e-9 * pd_norm) {
        // Offset parallel to the magnet axis: any direction perpendicular to w
        // serves as the in-plane axis. Retry until the draw is non-degenerate.
        do {
            const Vec3 q = rng.unit_vector();
            v = q.cross(w);
        } while (v.norm() <= 1e-9);
    }
    const Vec3 u = v.cross(w).normalized();

    const double dw = pd.dot(w);
    const double du = std::sqrt(std::max(pd.squaredNorm() - dw * dw, 0.0));

    auto [bu, bw] = source.field(du, dw);
    return bu * u + bw * w;
}

VecX synthesize_array(const Pose& pose, const SensorArray& array, const FieldSource2D& source,
                      RngStream& rng) {
    VecX out(3 * array.count());
    for (int k = 0; k < array.count(); ++k) {
        out.segment<3>(3 * k) = synthesize_reading(pose, array.positions[static_cast<std::size_t>(k)],
                                                   source, rng);
    }
    return out;
}

} // namespace magtrack
