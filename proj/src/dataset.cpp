#include "magtrack/dataset.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

namespace magtrack {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'S', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& out, const void* data, std::size_t size) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
        throw io_error("dataset: write failed");
    }
}

void read_bytes(std::ifstream& in, void* data, std::size_t size, std::size_t& offset) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in.gcount() != static_cast<std::streamsize>(size)) {
        throw io_error("dataset: truncated file at byte offset " + std::to_string(offset));
    }
    offset += size;
}

} // namespace

bool pose_collides(const Pose& pose, const MagnetSpec& spec, const SensorArray& array,
                   double margin) {
    const double o_norm = pose.o.norm();
    if (o_norm < 1e-12) {
        throw std::invalid_argument("pose_collides: orientation must be non-zero");
    }
    const Vec3 w = pose.o / o_norm;
    for (const Vec3& s : array.positions) {
        const Vec3 d = s - pose.p;
        const double dn2 = d.squaredNorm();
        if (dn2 < kDipoleSingularityFloor * kDipoleSingularityFloor) {
            return true;
        }
        const double dw = d.dot(w);
        const double du = std::sqrt(std::max(dn2 - dw * dw, 0.0));
        if (spec.inside_body(du, dw, margin)) {
            return true;
        }
    }
    return false;
}

Pose sample_pose(const SamplerConfig& cfg, const MagnetSpec& spec, const SensorArray& array,
                 RngStream& rng) {
    if (!cfg.volume.valid()) {
        throw config_error("sample_pose: invalid sampling volume");
    }
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        Pose pose;
        pose.p = rng.in_box(cfg.volume);
        pose.o = rng.unit_vector();
        if (!pose_collides(pose, spec, array, cfg.body_margin)) {
            return pose;
        }
    }
    throw config_error("sample_pose: could not place the magnet clear of all sensors");
}

VecX feature_engineer(const VecX& readings) {
    VecX out(readings.size());
    for (Eigen::Index i = 0; i < readings.size(); ++i) {
        out[i] = std::cbrt(readings[i]);
    }
    return out;
}

std::string to_string(SourceKind kind) {
    switch (kind) {
    case SourceKind::Dipole:
        return "dipole";
    case SourceKind::FemSurrogate:
        return "fem-surrogate";
    }
    throw std::logic_error("unknown source kind");
}

SourceKind source_kind_from_string(const std::string& name) {
    if (name == "dipole") {
        return SourceKind::Dipole;
    }
    if (name == "fem-surrogate") {
        return SourceKind::FemSurrogate;
    }
    throw config_error("unknown data source '" + name + "' (expected dipole or fem-surrogate)");
}

Dataset generate_dataset(int count, const MagnetSpec& spec, const SensorArray& array,
                         const FieldSource2D& source, SourceKind source_kind,
                         const SamplerConfig& cfg, std::uint64_t seed) {
    if (count < 0) {
        throw config_error("generate_dataset: count must be non-negative");
    }
    array.validate();

    Dataset data;
    data.spec = spec;
    data.array = array;
    data.source = source_kind;
    data.seed = seed;
    data.volume = cfg.volume;
    data.samples.reserve(static_cast<std::size_t>(count));

    for (int i = 0; i < count; ++i) {
        auto pose_rng = RngStream::substream(seed, static_cast<std::uint64_t>(i), 0);
        auto synth_rng = RngStream::substream(seed, static_cast<std::uint64_t>(i), 1);
        Sample s;
        s.label = sample_pose(cfg, spec, array, pose_rng);
        s.raw = synthesize_array(s.label, array, source, synth_rng);
        s.features = feature_engineer(s.raw);
        data.samples.push_back(std::move(s));
    }
    return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("dataset: cannot open '" + path + "' for writing");
    }
    write_bytes(out, kMagic, sizeof(kMagic));
    write_bytes(out, &kVersion, sizeof(kVersion));
    const std::uint8_t source = static_cast<std::uint8_t>(data.source);
    write_bytes(out, &source, sizeof(source));
    const std::uint8_t shape = static_cast<std::uint8_t>(data.spec.shape);
    write_bytes(out, &shape, sizeof(shape));
    const double spec_fields[4] = {data.spec.moment, data.spec.radius, data.spec.height,
                                   data.spec.magnetization};
    write_bytes(out, spec_fields, sizeof(spec_fields));
    write_bytes(out, &data.seed, sizeof(data.seed));
    const double volume[6] = {data.volume.lo.x(), data.volume.lo.y(), data.volume.lo.z(),
                              data.volume.hi.x(), data.volume.hi.y(), data.volume.hi.z()};
    write_bytes(out, volume, sizeof(volume));

    const std::uint32_t n_sensors = static_cast<std::uint32_t>(data.array.count());
    write_bytes(out, &n_sensors, sizeof(n_sensors));
    for (const Vec3& s : data.array.positions) {
        const double p[3] = {s.x(), s.y(), s.z()};
        write_bytes(out, p, sizeof(p));
    }

    const std::uint64_t count = static_cast<std::uint64_t>(data.count());
    write_bytes(out, &count, sizeof(count));
    const int dim = data.input_dim();
    for (const Sample& s : data.samples) {
        if (s.raw.size() != dim || s.features.size() != dim) {
            throw io_error("dataset: sample dimension does not match the sensor count");
        }
        write_bytes(out, s.raw.data(), static_cast<std::size_t>(dim) * sizeof(double));
        write_bytes(out, s.features.data(), static_cast<std::size_t>(dim) * sizeof(double));
        const double label[6] = {s.label.p.x(), s.label.p.y(), s.label.p.z(),
                                 s.label.o.x(), s.label.o.y(), s.label.o.z()};
        write_bytes(out, label, sizeof(label));
    }
    out.flush();
    if (!out) {
        throw io_error("dataset: write failed for '" + path + "'");
    }

    nlohmann::json meta;
    meta["seed"] = data.seed;
    meta["count"] = data.count();
    meta["source"] = to_string(data.source);
    meta["magnet"] = {{"shape", data.spec.shape == MagnetSpec::Shape::Sphere ? "sphere" : "cylinder"},
                      {"moment", data.spec.moment},
                      {"radius", data.spec.radius},
                      {"height", data.spec.height},
                      {"magnetization", data.spec.magnetization}};
    meta["volume"] = {{"lo", {data.volume.lo.x(), data.volume.lo.y(), data.volume.lo.z()}},
                      {"hi", {data.volume.hi.x(), data.volume.hi.y(), data.volume.hi.z()}}};
    nlohmann::json sensors = nlohmann::json::array();
    for (const Vec3& s : data.array.positions) {
        sensors.push_back({s.x(), s.y(), s.z()});
    }
    meta["sensors"] = sensors;

    std::ofstream side(path + ".json");
    if (!side) {
        throw io_error("dataset: cannot open '" + path + ".json' for writing");
    }
    side << meta.dump(2) << "\n";
    if (!side) {
        throw io_error("dataset: write failed for '" + path + ".json'");
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("dataset: cannot open '" + path + "' for reading");
    }
    std::size_t offset = 0;

    char magic[4];
    read_bytes(in, magic, sizeof(magic), offset);
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw io_error("dataset: bad magic in '" + path + "'");
    }
    std::uint32_t version = 0;
    read_bytes(in, &version, sizeof(version), offset);
    if (version != kVersion) {
        throw io_error("dataset: unsupported version " + std::to_string(version));
    }

    Dataset data;
    std::uint8_t source = 0;
    read_bytes(in, &source, sizeof(source), offset);
    if (source > static_cast<std::uint8_t>(SourceKind::FemSurrogate)) {
        throw io_error("dataset: invalid source tag at byte offset " + std::to_string(offset - 1));
    }
    data.source = static_cast<SourceKind>(source);

    std::uint8_t shape = 0;
    read_bytes(in, &shape, sizeof(shape), offset);
    if (shape > static_cast<std::uint8_t>(MagnetSpec::Shape::Cylinder)) {
        throw io_error("dataset: invalid magnet shape at byte offset " + std::to_string(offset - 1));
    }
    data.spec.shape = static_cast<MagnetSpec::Shape>(shape);
    double spec_fields[4];
    read_bytes(in, spec_fields, sizeof(spec_fields), offset);
    data.spec.moment = spec_fields[0];
    data.spec.radius = spec_fields[1];
    data.spec.height = spec_fields[2];
    data.spec.magnetization = spec_fields[3];

    read_bytes(in, &data.seed, sizeof(data.seed), offset);
    double volume[6];
    read_bytes(in, volume, sizeof(volume), offset);
    data.volume.lo = Vec3(volume[0], volume[1], volume[2]);
    data.volume.hi = Vec3(volume[3], volume[4], volume[5]);

    std::uint32_t n_sensors = 0;
    read_bytes(in, &n_sensors, sizeof(n_sensors), offset);
    if (n_sensors == 0 || n_sensors > 4096) {
        throw io_error("dataset: invalid sensor count at byte offset " +
                       std::to_string(offset - sizeof(n_sensors)));
    }
    data.array.positions.resize(n_sensors);
    for (std::uint32_t i = 0; i < n_sensors; ++i) {
        double p[3];
        read_bytes(in, p, sizeof(p), offset);
        data.array.positions[i] = Vec3(p[0], p[1], p[2]);
    }

    std::uint64_t count = 0;
    read_bytes(in, &count, sizeof(count), offset);
    const int dim = 3 * static_cast<int>(n_sensors);
    data.samples.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Sample& s = data.samples[i];
        s.raw.resize(dim);
        read_bytes(in, s.raw.data(), static_cast<std::size_t>(dim) * sizeof(double), offset);
        s.features.resize(dim);
        read_bytes(in, s.features.data(), static_cast<std::size_t>(dim) * sizeof(double), offset);
        double label[6];
        read_bytes(in, label, sizeof(label), offset);
        s.label.p = Vec3(label[0], label[1], label[2]);
        s.label.o = Vec3(label[3], label[4], label[5]);
    }
    return data;
}

void export_dataset_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw io_error("dataset: cannot open '" + path + "' for writing");
    }
    out << "index";
    for (int k = 0; k < data.array.count(); ++k) {
        out << ",bx" << k << ",by" << k << ",bz" << k;
    }
    out << ",px,py,pz,ox,oy,oz\n";
    out.precision(17);
    for (int i = 0; i < data.count(); ++i) {
        const Sample& s = data.samples[static_cast<std::size_t>(i)];
        out << i;
        for (Eigen::Index j = 0; j < s.raw.size(); ++j) {
            out << ',' << s.raw[j];
        }
        out << ',' << s.label.p.x() << ',' << s.label.p.y() << ',' << s.label.p.z() << ','
            << s.label.o.x() << ',' << s.label.o.y() << ',' << s.label.o.z() << '\n';
    }
    if (!out) {
        throw io_error("dataset: write failed for '" + path + "'");
    }
}

} // namespace magtrack
