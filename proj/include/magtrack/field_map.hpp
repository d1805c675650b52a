#pragma once

#include "magtrack/field_models.hpp"

#include <string>
#include <utility>
#include <vector>

namespace magtrack {

/// Grid geometry for a quadrant field map: du in [0, du_max], dw signed in
/// [-dw_max, dw_max].
struct FieldGridConfig {
    double du_max = 0.45; // m
    double dw_max = 0.45; // m
    int n_u = 451;
    int n_w = 901;
    double body_margin = 5e-4; // m, nodes this close to the body are masked

    static FieldGridConfig from_pitch(double du_max, double dw_max, double pitch);
};

/// Precomputed meridional-plane field of one magnet, standing in for a 2D FEM
/// solution. Immutable after construction and safe to share across threads.
/// Nodes inside the (margin-dilated) magnet body hold NaN.
class FieldMap2D {
public:
    FieldMap2D() = default;

    const MagnetSpec& spec() const { return spec_; }
    double du_max() const { return du_max_; }
    double dw_max() const { return dw_max_; }
    int n_u() const { return n_u_; }
    int n_w() const { return n_w_; }
    double pitch_u() const { return du_max_ / (n_u_ - 1); }
    double pitch_w() const { return 2.0 * dw_max_ / (n_w_ - 1); }

    double node_du(int iu) const { return iu * pitch_u(); }
    double node_dw(int iw) const { return -dw_max_ + iw * pitch_w(); }

    /// Stored node value; NaN pair when the node is masked.
    std::pair<double, double> node_value(int iu, int iw) const;
    bool node_masked(int iu, int iw) const;

    /// Bilinear interpolation inside the grid; equivalent-dipole far field
    /// beyond the extents. Throws std::domain_error for queries inside the
    /// body or touching masked nodes.
    std::pair<double, double> sample(double du, double dw) const;

    void save(const std::string& path) const;
    static FieldMap2D load(const std::string& path);

    friend FieldMap2D build_field_map(const MagnetSpec& spec, const FieldGridConfig& grid);

private:
    std::size_t idx(int iu, int iw) const { return (static_cast<std::size_t>(iu) * n_w_ + iw) * 2; }

    MagnetSpec spec_;
    double du_max_ = 0.0, dw_max_ = 0.0;
    int n_u_ = 0, n_w_ = 0;
    double equivalent_moment_ = 0.0;
    std::vector<double> values_; // row-major over (iu, iw), (B_u, B_w) pairs
};

/// Evaluates the analytic field at every grid node.
FieldMap2D build_field_map(const MagnetSpec& spec, const FieldGridConfig& grid);

} // namespace magtrack
