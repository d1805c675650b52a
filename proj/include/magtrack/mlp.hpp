#pragma once

#include "magtrack/rng.hpp"
#include "magtrack/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace magtrack {

/// Network shape and input convention. The full-scale regressor uses three
/// hidden layers of 2048; experiments shrink the width to stay fast.
struct MlpConfig {
    enum class InputKind : std::uint8_t { Cbrt = 0, Raw = 1 };

    int input_dim = 48;
    std::vector<int> hidden = {2048, 2048, 2048};
    int output_dim = 6;
    bool batch_norm = false;
    InputKind input = InputKind::Cbrt;

    void validate() const;
};

/// Fully connected ReLU network with optional batch normalization between
/// each hidden affine layer and its activation. Output layer is linear.
struct MlpModel {
    MlpConfig cfg;
    std::vector<MatX> weights; // layer l: (dim_{l+1} x dim_l)
    std::vector<VecX> biases;
    // Per hidden layer, present only when cfg.batch_norm is set.
    std::vector<VecX> bn_gamma, bn_beta, bn_mean, bn_var;

    int n_layers() const { return static_cast<int>(weights.size()); }
};

/// He fan-in initialization, zero biases, identity batch-norm state.
MlpModel init_mlp(const MlpConfig& cfg, RngStream& rng);

/// Activations cached by the training-mode forward pass for backprop.
struct MlpForward {
    std::vector<MatX> z;    // affine outputs per hidden layer
    std::vector<MatX> xhat; // normalized pre-activations (batch_norm only)
    std::vector<MatX> act;  // act[0] = input, then post-ReLU activations
    std::vector<VecX> mu, var; // batch statistics per hidden layer
    MatX output;            // final linear output (6 x batch)
};

/// Columns of `x` are samples. `update_running` controls whether batch
/// statistics fold into the running estimates; probes (finite differences)
/// switch it off so repeated passes stay side-effect free.
void mlp_forward_train(MlpModel& model, const MatX& x, MlpForward& fwd,
                       bool update_running = true);

/// Inference-mode forward (running statistics, no caches).
MatX mlp_forward_eval(const MlpModel& model, const MatX& x);

struct PoseLossTerms {
    double total = 0.0;
    double position = 0.0;    // mean squared position error, m^2
    double orientation = 0.0; // eta-weighted mean squared direction error
};

/// Mean over columns of ||p_t - p_p||^2 + eta ||o_t/|o_t| - o_p/|o_p|||^2.
/// Predicted orientations are normalized with an epsilon guard so the loss
/// stays differentiable near zero.
PoseLossTerms pose_loss(const MatX& pred, const MatX& labels, double eta);

struct MlpGradients {
    std::vector<MatX> weights;
    std::vector<VecX> biases, bn_gamma, bn_beta;
};

/// Training-mode forward + exact backprop of pose_loss. Returns the batch
/// loss and fills `grads` (resized as needed).
PoseLossTerms mlp_backward(MlpModel& model, const MatX& x, const MatX& labels, double eta,
                           MlpGradients& grads, MlpForward& fwd, bool update_running = true);

/// Source of training batches. Implementations decide whether data is drawn
/// fresh every epoch or shuffled from a fixed set.
class BatchProvider {
public:
    virtual ~BatchProvider() = default;
    virtual int input_dim() const = 0;
    virtual int samples_per_epoch() const = 0;
    /// Fill `x` (input_dim x count) and `y` (6 x count) with samples
    /// [start, start+count) of the given epoch.
    virtual void fill(int epoch, int start, int count, MatX& x, MatX& y) = 0;
};

struct TrainConfig {
    int epochs = 10;
    int batch_size = 256;
    double lr = 1e-4;       // initial Adam step size
    double lr_decay = 0.98; // per-epoch multiplicative decay
    double eta = 1e-5;      // orientation loss weight
};

struct EpochStats {
    int epoch = 0; // 0-based
    double lr = 0.0;
    PoseLossTerms train;
    PoseLossTerms test;
};

struct TrainResult {
    std::vector<EpochStats> history;
};

/// Adam with the usual (0.9, 0.999, 1e-8) moments and bias correction;
/// epoch k runs at lr * lr_decay^k. Throws divergence_error when the loss
/// stops being finite.
TrainResult train_mlp(MlpModel& model, BatchProvider& provider, const MatX& test_x,
                      const MatX& test_y, const TrainConfig& cfg);

/// Inference-mode loss on a fixed evaluation set.
PoseLossTerms evaluate_mlp(const MlpModel& model, const MatX& x, const MatX& y, double eta);

struct PosePrediction {
    Pose pose;
    bool orientation_valid = true;
};

/// Applies the model's input transform to raw readings and normalizes the
/// orientation output. A (near-)zero orientation vector is flagged invalid;
/// the position is still returned.
PosePrediction predict_pose(const MlpModel& model, const VecX& raw_readings);

void save_mlp(const MlpModel& model, const std::string& path);
MlpModel load_mlp(const std::string& path);

void write_loss_history_csv(const std::vector<EpochStats>& history, const std::string& path);

} // namespace magtrack
