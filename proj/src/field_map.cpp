#include "magtrack/field_map.hpp"

#include "magtrack/types.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "field map serialization assumes a little-endian host");

namespace magtrack {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'A', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& out, const void* data, std::size_t size) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
        throw io_error("field map: write failed");
    }
}

void read_bytes(std::ifstream& in, void* data, std::size_t size, std::size_t offset) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in.gcount() != static_cast<std::streamsize>(size)) {
        throw io_error("field map: truncated file at byte offset " + std::to_string(offset));
    }
}

} // namespace

FieldGridConfig FieldGridConfig::from_pitch(double du_max, double dw_max, double pitch) {
    if (!(pitch > 0.0) || pitch > du_max || pitch > 2.0 * dw_max) {
        throw config_error("field map: grid pitch must be positive and no larger than the extents");
    }
    FieldGridConfig cfg;
    cfg.du_max = du_max;
    cfg.dw_max = dw_max;
    cfg.n_u = static_cast<int>(std::lround(du_max / pitch)) + 1;
    cfg.n_w = static_cast<int>(std::lround(2.0 * dw_max / pitch)) + 1;
    return cfg;
}

std::pair<double, double> FieldMap2D::node_value(int iu, int iw) const {
    if (iu < 0 || iu >= n_u_ || iw < 0 || iw >= n_w_) {
        throw std::out_of_range("field map: node index out of range");
    }
    const std::size_t k = idx(iu, iw);
    return {values_[k], values_[k + 1]};
}

bool FieldMap2D::node_masked(int iu, int iw) const {
    auto [bu, bw] = node_value(iu, iw);
    return std::isnan(bu) || std::isnan(bw);
}

std::pair<double, double> FieldMap2D::sample(double du, double dw) const {
    if (n_u_ < 2 || n_w_ < 2) {
        throw std::logic_error("field map: sampling an empty map");
    }
    if (!(du >= 0.0) || !std::isfinite(du) || !std::isfinite(dw)) {
        throw std::invalid_argument("field map: du must be finite and non-negative, dw finite");
    }
    if (spec_.inside_body(du, dw)) {
        throw std::domain_error("field map: query point inside the magnet body");
    }
    if (du > du_max_ || std::abs(dw) > dw_max_) {
        // Far-field fallback: the magnet seen as an equivalent point dipole
        // along the w axis carries the field beyond the tabulated extents.
        const Vec3 moment(0.0, 0.0, equivalent_moment_);
        const Vec3 r(du, 0.0, dw);
        const Vec3 b = dipole_field(moment, r);
        return {b.x(), b.z()};
    }

    const double fu = du / pitch_u();
    const double fw = (dw + dw_max_) / pitch_w();
    int iu = std::min(static_cast<int>(fu), n_u_ - 2);
    int iw = std::min(static_cast<int>(fw), n_w_ - 2);
    const double tu = fu - iu;
    const double tw = fw - iw;

    const auto v00 = node_value(iu, iw);
    const auto v10 = node_value(iu + 1, iw);
    const auto v01 = node_value(iu, iw + 1);
    const auto v11 = node_value(iu + 1, iw + 1);
    const double corners[8] = {v00.first, v00.second, v10.first, v10.second,
                               v01.first, v01.second, v11.first, v11.second};
    for (double c : corners) {
        if (std::isnan(c)) {
            throw std::domain_error("field map: query too close to the magnet body (masked node)");
        }
    }

    const double w00 = (1.0 - tu) * (1.0 - tw);
    const double w10 = tu * (1.0 - tw);
    const double w01 = (1.0 - tu) * tw;
    const double w11 = tu * tw;
    const double bu = w00 * v00.first + w10 * v10.first + w01 * v01.first + w11 * v11.first;
    const double bw = w00 * v00.second + w10 * v10.second + w01 * v01.second + w11 * v11.second;
    return {bu, bw};
}

FieldMap2D build_field_map(const MagnetSpec& spec, const FieldGridConfig& grid) {
    if (grid.n_u < 2 || grid.n_w < 2) {
        throw config_error("field map: grid needs at least 2 nodes per axis");
    }
    if (!(grid.du_max > 0.0) || !(grid.dw_max > 0.0)) {
        throw config_error("field map: grid extents must be positive");
    }
    if (!(grid.body_margin >= 0.0)) {
        throw config_error("field map: body margin must be non-negative");
    }

    FieldMap2D map;
    map.spec_ = spec;
    map.du_max_ = grid.du_max;
    map.dw_max_ = grid.dw_max;
    map.n_u_ = grid.n_u;
    map.n_w_ = grid.n_w;
    map.equivalent_moment_ = equivalent_dipole_moment(spec);
    map.values_.assign(static_cast<std::size_t>(grid.n_u) * grid.n_w * 2,
                       std::numeric_limits<double>::quiet_NaN());

    const double floor2 = kDipoleSingularityFloor * kDipoleSingularityFloor;
    for (int iu = 0; iu < grid.n_u; ++iu) {
        const double du = map.node_du(iu);
        for (int iw = 0; iw < grid.n_w; ++iw) {
            const double dw = map.node_dw(iw);
            if (spec.inside_body(du, dw, grid.body_margin)) {
                continue;
            }
            if (du * du + dw * dw < floor2) {
                continue;
            }
            auto [bu, bw] = magnet_field_2d(spec, du, dw);
            const std::size_t k = map.idx(iu, iw);
            map.values_[k] = bu;
            map.values_[k + 1] = bw;
        }
    }
    return map;
}

void FieldMap2D::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("field map: cannot open '" + path + "' for writing");
    }
    write_bytes(out, kMagic, sizeof(kMagic));
    write_bytes(out, &kVersion, sizeof(kVersion));
    const std::uint8_t shape = static_cast<std::uint8_t>(spec_.shape);
    write_bytes(out, &shape, sizeof(shape));
    const double spec_fields[4] = {spec_.moment, spec_.radius, spec_.height, spec_.magnetization};
    write_bytes(out, spec_fields, sizeof(spec_fields));
    const double extents[2] = {du_max_, dw_max_};
    write_bytes(out, extents, sizeof(extents));
    const std::uint32_t counts[2] = {static_cast<std::uint32_t>(n_u_),
                                     static_cast<std::uint32_t>(n_w_)};
    write_bytes(out, counts, sizeof(counts));
    write_bytes(out, values_.data(), values_.size() * sizeof(double));
    out.flush();
    if (!out) {
        throw io_error("field map: write failed for '" + path + "'");
    }
}

FieldMap2D FieldMap2D::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("field map: cannot open '" + path + "' for reading");
    }
    std::size_t offset = 0;

    char magic[4];
    read_bytes(in, magic, sizeof(magic), offset);
    offset += sizeof(magic);
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw io_error("field map: bad magic in '" + path + "'");
    }
    std::uint32_t version = 0;
    read_bytes(in, &version, sizeof(version), offset);
    offset += sizeof(version);
    if (version != kVersion) {
        throw io_error("field map: unsupported version " + std::to_string(version));
    }

    std::uint8_t shape = 0;
    read_bytes(in, &shape, sizeof(shape), offset);
    offset += sizeof(shape);
    if (shape > static_cast<std::uint8_t>(MagnetSpec::Shape::Cylinder)) {
        throw io_error("field map: invalid magnet shape tag");
    }
    double spec_fields[4];
    read_bytes(in, spec_fields, sizeof(spec_fields), offset);
    offset += sizeof(spec_fields);

    FieldMap2D map;
    map.spec_.shape = static_cast<MagnetSpec::Shape>(shape);
    map.spec_.moment = spec_fields[0];
    map.spec_.radius = spec_fields[1];
    map.spec_.height = spec_fields[2];
    map.spec_.magnetization = spec_fields[3];
    map.equivalent_moment_ = equivalent_dipole_moment(map.spec_);

    double extents[2];
    read_bytes(in, extents, sizeof(extents), offset);
    offset += sizeof(extents);
    map.du_max_ = extents[0];
    map.dw_max_ = extents[1];
    if (!(map.du_max_ > 0.0) || !(map.dw_max_ > 0.0)) {
        throw io_error("field map: invalid extents in '" + path + "'");
    }

    std::uint32_t counts[2];
    read_bytes(in, counts, sizeof(counts), offset);
    offset += sizeof(counts);
    if (counts[0] < 2 || counts[1] < 2 || counts[0] > (1u << 20) || counts[1] > (1u << 20)) {
        throw io_error("field map: invalid grid size in '" + path + "'");
    }
    map.n_u_ = static_cast<int>(counts[0]);
    map.n_w_ = static_cast<int>(counts[1]);

    map.values_.resize(static_cast<std::size_t>(map.n_u_) * map.n_w_ * 2);
    read_bytes(in, map.values_.data(), map.values_.size() * sizeof(double), offset);
    return map;
}

} // namespace magtrack
