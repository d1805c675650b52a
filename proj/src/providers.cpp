#include "magtrack/providers.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace magtrack {

namespace {

void check_window(int start, int count, int total) {
    if (start < 0 || count <= 0 || start + count > total) {
        throw std::invalid_argument("provider: batch window out of range");
    }
}

void put_sample(MatX& x, MatX& y, Eigen::Index col, const VecX& features, const Pose& label) {
    x.col(col) = features;
    y.block<3, 1>(0, col) = label.p;
    y.block<3, 1>(3, col) = label.o;
}

} // namespace

GeneratorProvider::GeneratorProvider(const MagnetSpec& spec, const SensorArray& array,
                                     const FieldSource2D& source, const SamplerConfig& sampler,
                                     MlpConfig::InputKind input, int samples_per_epoch,
                                     std::uint64_t seed)
    : spec_(spec), array_(array), source_(&source), sampler_(sampler), input_(input),
      samples_per_epoch_(samples_per_epoch), seed_(seed) {
    if (samples_per_epoch <= 0) {
        throw config_error("provider: samples per epoch must be positive");
    }
    array_.validate();
}

void GeneratorProvider::fill(int epoch, int start, int count, MatX& x, MatX& y) {
    check_window(start, count, samples_per_epoch_);
    x.resize(input_dim(), count);
    y.resize(6, count);
    for (int i = 0; i < count; ++i) {
        const std::uint64_t global = static_cast<std::uint64_t>(epoch) *
                                         static_cast<std::uint64_t>(samples_per_epoch_) +
                                     static_cast<std::uint64_t>(start + i);
        auto pose_rng = RngStream::substream(seed_, global, 0);
        auto synth_rng = RngStream::substream(seed_, global, 1);
        const Pose pose = sample_pose(sampler_, spec_, array_, pose_rng);
        VecX readings = synthesize_array(pose, array_, *source_, synth_rng);
        if (input_ == MlpConfig::InputKind::Cbrt) {
            readings = feature_engineer(readings);
        }
        put_sample(x, y, i, readings, pose);
    }
}

DatasetProvider::DatasetProvider(const Dataset& data, MlpConfig::InputKind input,
                                 std::uint64_t seed)
    : data_(&data), input_(input), seed_(seed) {
    if (data.count() == 0) {
        throw config_error("provider: dataset is empty");
    }
}

void DatasetProvider::fill(int epoch, int start, int count, MatX& x, MatX& y) {
    check_window(start, count, data_->count());
    if (perm_epoch_ != epoch) {
        perm_.resize(static_cast<std::size_t>(data_->count()));
        std::iota(perm_.begin(), perm_.end(), 0);
        auto rng = RngStream::substream(seed_, static_cast<std::uint64_t>(epoch), 2);
        std::shuffle(perm_.begin(), perm_.end(), rng.engine());
        perm_epoch_ = epoch;
    }
    x.resize(input_dim(), count);
    y.resize(6, count);
    for (int i = 0; i < count; ++i) {
        const Sample& s = data_->samples[static_cast<std::size_t>(perm_[static_cast<std::size_t>(start + i)])];
        put_sample(x, y, i, input_ == MlpConfig::InputKind::Cbrt ? s.features : s.raw, s.label);
    }
}

std::pair<MatX, MatX> dataset_matrices(const Dataset& data, MlpConfig::InputKind input) {
    MatX x(data.input_dim(), data.count());
    MatX y(6, data.count());
    for (int i = 0; i < data.count(); ++i) {
        const Sample& s = data.samples[static_cast<std::size_t>(i)];
        put_sample(x, y, i, input == MlpConfig::InputKind::Cbrt ? s.features : s.raw, s.label);
    }
    return {std::move(x), std::move(y)};
}

} // namespace magtrack
