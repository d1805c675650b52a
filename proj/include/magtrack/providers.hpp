#pragma once

#include "magtrack/dataset.hpp"
#include "magtrack/mlp.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace magtrack {

/// Draws fresh samples for every epoch, the regime the regressor is trained
/// in. Sample (epoch, index) is keyed by its global index, so results do not
/// depend on batch boundaries. The source and array must outlive the provider.
class GeneratorProvider final : public BatchProvider {
public:
    GeneratorProvider(const MagnetSpec& spec, const SensorArray& array,
                      const FieldSource2D& source, const SamplerConfig& sampler,
                      MlpConfig::InputKind input, int samples_per_epoch, std::uint64_t seed);

    int input_dim() const override { return 3 * array_.count(); }
    int samples_per_epoch() const override { return samples_per_epoch_; }
    void fill(int epoch, int start, int count, MatX& x, MatX& y) override;

private:
    MagnetSpec spec_;
    SensorArray array_;
    const FieldSource2D* source_;
    SamplerConfig sampler_;
    MlpConfig::InputKind input_;
    int samples_per_epoch_;
    std::uint64_t seed_;
};

/// Replays a fixed dataset, reshuffled every epoch.
class DatasetProvider final : public BatchProvider {
public:
    DatasetProvider(const Dataset& data, MlpConfig::InputKind input, std::uint64_t seed);

    int input_dim() const override { return data_->input_dim(); }
    int samples_per_epoch() const override { return data_->count(); }
    void fill(int epoch, int start, int count, MatX& x, MatX& y) override;

private:
    const Dataset* data_;
    MlpConfig::InputKind input_;
    std::uint64_t seed_;
    int perm_epoch_ = -1;
    std::vector<int> perm_;
};

/// Dense (features, labels) matrices of a whole dataset, for evaluation.
std::pair<MatX, MatX> dataset_matrices(const Dataset& data, MlpConfig::InputKind input);

} // namespace magtrack
