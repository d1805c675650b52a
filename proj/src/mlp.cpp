#include "magtrack/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "model serialization assumes a little-endian host");

namespace magtrack {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9; // fraction of the running estimate kept
constexpr double kOrientEps = 1e-12;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

constexpr char kMagic[4] = {'M', 'M', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;

std::vector<int> layer_dims(const MlpConfig& cfg) {
    std::vector<int> dims;
    dims.push_back(cfg.input_dim);
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(cfg.output_dim);
    return dims;
}

void write_bytes(std::ofstream& out, const void* data, std::size_t size) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
        throw io_error("model: write failed");
    }
}

void read_bytes(std::ifstream& in, void* data, std::size_t size, std::size_t& offset) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in.gcount() != static_cast<std::streamsize>(size)) {
        throw io_error("model: truncated file at byte offset " + std::to_string(offset));
    }
    offset += size;
}

} // namespace

void MlpConfig::validate() const {
    if (input_dim <= 0 || output_dim <= 0) {
        throw config_error("mlp: input and output dimensions must be positive");
    }
    for (int h : hidden) {
        if (h <= 0) {
            throw config_error("mlp: hidden widths must be positive");
        }
    }
    if (batch_norm && hidden.empty()) {
        throw config_error("mlp: batch normalization needs at least one hidden layer");
    }
}

MlpModel init_mlp(const MlpConfig& cfg, RngStream& rng) {
    cfg.validate();
    const auto dims = layer_dims(cfg);
    MlpModel model;
    model.cfg = cfg;
    const int n_layers = static_cast<int>(dims.size()) - 1;
    model.weights.reserve(static_cast<std::size_t>(n_layers));
    model.biases.reserve(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        const int fan_in = dims[static_cast<std::size_t>(l)];
        const int fan_out = dims[static_cast<std::size_t>(l) + 1];
        const double stddev = std::sqrt(2.0 / fan_in);
        MatX w(fan_out, fan_in);
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] = rng.normal(0.0, stddev);
        }
        model.weights.push_back(std::move(w));
        model.biases.push_back(VecX::Zero(fan_out));
    }
    if (cfg.batch_norm) {
        for (int width : cfg.hidden) {
            model.bn_gamma.push_back(VecX::Ones(width));
            model.bn_beta.push_back(VecX::Zero(width));
            model.bn_mean.push_back(VecX::Zero(width));
            model.bn_var.push_back(VecX::Ones(width));
        }
    }
    return model;
}

void mlp_forward_train(MlpModel& model, const MatX& x, MlpForward& fwd, bool update_running) {
    const int n_layers = model.n_layers();
    const int n_hidden = n_layers - 1;
    if (x.rows() != model.cfg.input_dim) {
        throw std::invalid_argument("mlp: input dimension mismatch");
    }
    const Eigen::Index batch = x.cols();
    if (model.cfg.batch_norm && batch < 2) {
        throw std::invalid_argument("mlp: batch normalization needs batches of at least 2");
    }

    fwd.z.resize(static_cast<std::size_t>(n_hidden));
    fwd.act.resize(static_cast<std::size_t>(n_layers));
    fwd.xhat.resize(model.cfg.batch_norm ? static_cast<std::size_t>(n_hidden) : 0);
    fwd.mu.resize(model.cfg.batch_norm ? static_cast<std::size_t>(n_hidden) : 0);
    fwd.var.resize(model.cfg.batch_norm ? static_cast<std::size_t>(n_hidden) : 0);

    fwd.act[0] = x;
    for (int l = 0; l < n_hidden; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        MatX& z = fwd.z[ul];
        z.noalias() = model.weights[ul] * fwd.act[ul];
        z.colwise() += model.biases[ul];
        if (model.cfg.batch_norm) {
            VecX& mu = fwd.mu[ul];
            VecX& var = fwd.var[ul];
            mu = z.rowwise().mean();
            MatX centered = z.colwise() - mu;
            var = centered.array().square().rowwise().mean();
            const VecX inv_std = (var.array() + kBnEps).sqrt().inverse();
            fwd.xhat[ul] = (centered.array().colwise() * inv_std.array()).matrix();
            if (update_running) {
                model.bn_mean[ul] = kBnMomentum * model.bn_mean[ul] + (1.0 - kBnMomentum) * mu;
                model.bn_var[ul] = kBnMomentum * model.bn_var[ul] + (1.0 - kBnMomentum) * var;
            }
            MatX pre = (fwd.xhat[ul].array().colwise() * model.bn_gamma[ul].array()).matrix();
            pre.colwise() += model.bn_beta[ul];
            fwd.act[ul + 1] = pre.cwiseMax(0.0);
        } else {
            fwd.act[ul + 1] = z.cwiseMax(0.0);
        }
    }
    fwd.output.noalias() = model.weights[static_cast<std::size_t>(n_hidden)] *
                           fwd.act[static_cast<std::size_t>(n_hidden)];
    fwd.output.colwise() += model.biases[static_cast<std::size_t>(n_hidden)];
}

MatX mlp_forward_eval(const MlpModel& model, const MatX& x) {
    if (x.rows() != model.cfg.input_dim) {
        throw std::invalid_argument("mlp: input dimension mismatch");
    }
    const int n_hidden = model.n_layers() - 1;
    MatX act = x;
    for (int l = 0; l < n_hidden; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        MatX z = model.weights[ul] * act;
        z.colwise() += model.biases[ul];
        if (model.cfg.batch_norm) {
            const VecX inv_std = (model.bn_var[ul].array() + kBnEps).sqrt().inverse();
            z.colwise() -= model.bn_mean[ul];
            z.array().colwise() *= (inv_std.array() * model.bn_gamma[ul].array());
            z.colwise() += model.bn_beta[ul];
        }
        act = z.cwiseMax(0.0);
    }
    MatX out = model.weights[static_cast<std::size_t>(n_hidden)] * act;
    out.colwise() += model.biases[static_cast<std::size_t>(n_hidden)];
    return out;
}

PoseLossTerms pose_loss(const MatX& pred, const MatX& labels, double eta) {
    if (pred.rows() != 6 || labels.rows() != 6 || pred.cols() != labels.cols()) {
        throw std::invalid_argument("pose_loss: expected 6-row prediction and label matrices");
    }
    const Eigen::Index batch = pred.cols();
    if (batch == 0) {
        throw std::invalid_argument("pose_loss: empty batch");
    }
    PoseLossTerms terms;
    for (Eigen::Index j = 0; j < batch; ++j) {
        terms.position += (pred.block<3, 1>(0, j) - labels.block<3, 1>(0, j)).squaredNorm();
        const Vec3 o = pred.block<3, 1>(3, j);
        const Vec3 t = labels.block<3, 1>(3, j);
        const Vec3 o_hat = o / (o.norm() + kOrientEps);
        const Vec3 t_hat = t / (t.norm() + kOrientEps);
        terms.orientation += eta * (o_hat - t_hat).squaredNorm();
    }
    terms.position /= static_cast<double>(batch);
    terms.orientation /= static_cast<double>(batch);
    terms.total = terms.position + terms.orientation;
    return terms;
}

PoseLossTerms mlp_backward(MlpModel& model, const MatX& x, const MatX& labels, double eta,
                           MlpGradients& grads, MlpForward& fwd, bool update_running) {
    if (labels.rows() != model.cfg.output_dim) {
        throw std::invalid_argument("mlp: label dimension mismatch");
    }
    if (labels.cols() != x.cols()) {
        throw std::invalid_argument("mlp: batch size mismatch between inputs and labels");
    }
    mlp_forward_train(model, x, fwd, update_running);
    const Eigen::Index batch = x.cols();
    const int n_layers = model.n_layers();
    const int n_hidden = n_layers - 1;
    const double inv_batch = 1.0 / static_cast<double>(batch);

    const PoseLossTerms terms = pose_loss(fwd.output, labels, eta);

    // Loss gradient at the linear output.
    MatX dz(6, batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
        dz.block<3, 1>(0, j) =
            2.0 * inv_batch * (fwd.output.block<3, 1>(0, j) - labels.block<3, 1>(0, j));
        const Vec3 o = fwd.output.block<3, 1>(3, j);
        const Vec3 t = labels.block<3, 1>(3, j);
        const double o_norm = o.norm();
        const double nu = o_norm + kOrientEps;
        const Vec3 o_hat = o / nu;
        const Vec3 e = o_hat - t / (t.norm() + kOrientEps);
        Vec3 go = e / nu;
        if (o_norm > 0.0) {
            go -= o * (e.dot(o) / (nu * nu * o_norm));
        }
        dz.block<3, 1>(3, j) = 2.0 * eta * inv_batch * go;
    }

    grads.weights.resize(static_cast<std::size_t>(n_layers));
    grads.biases.resize(static_cast<std::size_t>(n_layers));
    grads.bn_gamma.resize(model.cfg.batch_norm ? static_cast<std::size_t>(n_hidden) : 0);
    grads.bn_beta.resize(model.cfg.batch_norm ? static_cast<std::size_t>(n_hidden) : 0);

    for (int l = n_layers - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        grads.weights[ul].noalias() = dz * fwd.act[ul].transpose();
        grads.biases[ul] = dz.rowwise().sum();
        if (l == 0) {
            break;
        }
        MatX da;
        da.noalias() = model.weights[ul].transpose() * dz;
        // ReLU mask: the stored activation is positive iff its input was.
        const auto hl = static_cast<std::size_t>(l - 1);
        MatX dpre = (fwd.act[ul].array() > 0.0).select(da, 0.0);
        if (model.cfg.batch_norm) {
            grads.bn_gamma[hl] = (dpre.array() * fwd.xhat[hl].array()).rowwise().sum();
            grads.bn_beta[hl] = dpre.rowwise().sum();
            const MatX dxhat = (dpre.array().colwise() * model.bn_gamma[hl].array()).matrix();
            const VecX inv_std = (fwd.var[hl].array() + kBnEps).sqrt().inverse();
            const VecX sum_dxhat = dxhat.rowwise().sum();
            const VecX sum_dxhat_xhat = (dxhat.array() * fwd.xhat[hl].array()).rowwise().sum();
            MatX tmp = dxhat * static_cast<double>(batch);
            tmp.colwise() -= sum_dxhat;
            tmp -= (fwd.xhat[hl].array().colwise() * sum_dxhat_xhat.array()).matrix();
            dz = (tmp.array().colwise() * (inv_std.array() * inv_batch)).matrix();
        } else {
            dz = std::move(dpre);
        }
    }
    return terms;
}

PoseLossTerms evaluate_mlp(const MlpModel& model, const MatX& x, const MatX& y, double eta) {
    return pose_loss(mlp_forward_eval(model, x), y, eta);
}

namespace {

struct AdamState {
    std::vector<MatX> m_w, v_w;
    std::vector<VecX> m_b, v_b, m_g, v_g, m_bt, v_bt;

    explicit AdamState(const MlpModel& model) {
        for (const MatX& w : model.weights) {
            m_w.push_back(MatX::Zero(w.rows(), w.cols()));
            v_w.push_back(MatX::Zero(w.rows(), w.cols()));
        }
        for (const VecX& b : model.biases) {
            m_b.push_back(VecX::Zero(b.size()));
            v_b.push_back(VecX::Zero(b.size()));
        }
        for (const VecX& g : model.bn_gamma) {
            m_g.push_back(VecX::Zero(g.size()));
            v_g.push_back(VecX::Zero(g.size()));
            m_bt.push_back(VecX::Zero(g.size()));
            v_bt.push_back(VecX::Zero(g.size()));
        }
    }
};

template <typename T>
void adam_update(T& param, const T& grad, T& m, T& v, double lr, double bc1, double bc2) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kAdamEps);
}

} // namespace

TrainResult train_mlp(MlpModel& model, BatchProvider& provider, const MatX& test_x,
                      const MatX& test_y, const TrainConfig& cfg) {
    if (cfg.epochs <= 0 || cfg.batch_size <= 0) {
        throw config_error("train: epochs and batch size must be positive");
    }
    if (provider.input_dim() != model.cfg.input_dim) {
        throw config_error("train: provider input dimension does not match the model");
    }
    const int n_batches = provider.samples_per_epoch() / cfg.batch_size;
    if (n_batches < 1) {
        throw config_error("train: fewer samples per epoch than one batch");
    }
    if (test_x.cols() != test_y.cols() || test_x.rows() != model.cfg.input_dim ||
        test_y.rows() != model.cfg.output_dim) {
        throw config_error("train: evaluation set dimensions are inconsistent");
    }

    AdamState state(model);
    MlpGradients grads;
    MlpForward fwd;
    MatX x, y;
    TrainResult result;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr * std::pow(cfg.lr_decay, epoch);
        PoseLossTerms train_mean;
        for (int bi = 0; bi < n_batches; ++bi) {
            provider.fill(epoch, bi * cfg.batch_size, cfg.batch_size, x, y);
            const PoseLossTerms terms = mlp_backward(model, x, y, cfg.eta, grads, fwd);
            if (!std::isfinite(terms.total)) {
                throw divergence_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(bi));
            }
            ++step;
            const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
            for (std::size_t l = 0; l < model.weights.size(); ++l) {
                adam_update(model.weights[l], grads.weights[l], state.m_w[l], state.v_w[l], lr,
                            bc1, bc2);
                adam_update(model.biases[l], grads.biases[l], state.m_b[l], state.v_b[l], lr, bc1,
                            bc2);
            }
            for (std::size_t l = 0; l < model.bn_gamma.size(); ++l) {
                adam_update(model.bn_gamma[l], grads.bn_gamma[l], state.m_g[l], state.v_g[l], lr,
                            bc1, bc2);
                adam_update(model.bn_beta[l], grads.bn_beta[l], state.m_bt[l], state.v_bt[l], lr,
                            bc1, bc2);
            }
            train_mean.total += terms.total;
            train_mean.position += terms.position;
            train_mean.orientation += terms.orientation;
        }
        train_mean.total /= n_batches;
        train_mean.position /= n_batches;
        train_mean.orientation /= n_batches;

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train = train_mean;
        stats.test = test_x.cols() > 0 ? evaluate_mlp(model, test_x, test_y, cfg.eta)
                                       : PoseLossTerms{};
        result.history.push_back(stats);
    }
    return result;
}

PosePrediction predict_pose(const MlpModel& model, const VecX& raw_readings) {
    if (raw_readings.size() != model.cfg.input_dim) {
        throw std::invalid_argument("predict_pose: reading length does not match the model input");
    }
    VecX features = raw_readings;
    if (model.cfg.input == MlpConfig::InputKind::Cbrt) {
        for (Eigen::Index i = 0; i < features.size(); ++i) {
            features[i] = std::cbrt(features[i]);
        }
    }
    const MatX out = mlp_forward_eval(model, features);
    PosePrediction pred;
    pred.pose.p = out.block<3, 1>(0, 0);
    const Vec3 o = out.block<3, 1>(3, 0);
    const double o_norm = o.norm();
    if (o_norm < 1e-12) {
        pred.orientation_valid = false;
        pred.pose.o = o;
    } else {
        pred.pose.o = o / o_norm;
    }
    return pred;
}

void save_mlp(const MlpModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("model: cannot open '" + path + "' for writing");
    }
    write_bytes(out, kMagic, sizeof(kMagic));
    write_bytes(out, &kVersion, sizeof(kVersion));
    const std::uint8_t input_kind = static_cast<std::uint8_t>(model.cfg.input);
    const std::uint8_t batch_norm = model.cfg.batch_norm ? 1 : 0;
    write_bytes(out, &input_kind, sizeof(input_kind));
    write_bytes(out, &batch_norm, sizeof(batch_norm));
    const auto dims = layer_dims(model.cfg);
    const std::uint32_t n_dims = static_cast<std::uint32_t>(dims.size());
    write_bytes(out, &n_dims, sizeof(n_dims));
    for (int d : dims) {
        const std::uint32_t v = static_cast<std::uint32_t>(d);
        write_bytes(out, &v, sizeof(v));
    }
    // Weights in Eigen's column-major storage order.
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        write_bytes(out, model.weights[l].data(),
                    static_cast<std::size_t>(model.weights[l].size()) * sizeof(double));
        write_bytes(out, model.biases[l].data(),
                    static_cast<std::size_t>(model.biases[l].size()) * sizeof(double));
    }
    for (std::size_t l = 0; l < model.bn_gamma.size(); ++l) {
        for (const VecX* v :
             {&model.bn_gamma[l], &model.bn_beta[l], &model.bn_mean[l], &model.bn_var[l]}) {
            write_bytes(out, v->data(), static_cast<std::size_t>(v->size()) * sizeof(double));
        }
    }
    out.flush();
    if (!out) {
        throw io_error("model: write failed for '" + path + "'");
    }
}

MlpModel load_mlp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("model: cannot open '" + path + "' for reading");
    }
    std::size_t offset = 0;
    char magic[4];
    read_bytes(in, magic, sizeof(magic), offset);
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw io_error("model: bad magic in '" + path + "'");
    }
    std::uint32_t version = 0;
    read_bytes(in, &version, sizeof(version), offset);
    if (version != kVersion) {
        throw io_error("model: unsupported version " + std::to_string(version));
    }
    std::uint8_t input_kind = 0, batch_norm = 0;
    read_bytes(in, &input_kind, sizeof(input_kind), offset);
    read_bytes(in, &batch_norm, sizeof(batch_norm), offset);
    if (input_kind > static_cast<std::uint8_t>(MlpConfig::InputKind::Raw)) {
        throw io_error("model: invalid input-kind tag");
    }
    std::uint32_t n_dims = 0;
    read_bytes(in, &n_dims, sizeof(n_dims), offset);
    if (n_dims < 2 || n_dims > 64) {
        throw io_error("model: invalid layer count");
    }
    std::vector<int> dims(n_dims);
    for (std::uint32_t i = 0; i < n_dims; ++i) {
        std::uint32_t v = 0;
        read_bytes(in, &v, sizeof(v), offset);
        if (v == 0 || v > (1u << 20)) {
            throw io_error("model: invalid layer width");
        }
        dims[i] = static_cast<int>(v);
    }

    MlpConfig cfg;
    cfg.input_dim = dims.front();
    cfg.output_dim = dims.back();
    cfg.hidden.assign(dims.begin() + 1, dims.end() - 1);
    cfg.batch_norm = batch_norm != 0;
    cfg.input = static_cast<MlpConfig::InputKind>(input_kind);
    cfg.validate();

    MlpModel model;
    model.cfg = cfg;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        MatX w(dims[l + 1], dims[l]);
        read_bytes(in, w.data(), static_cast<std::size_t>(w.size()) * sizeof(double), offset);
        VecX b(dims[l + 1]);
        read_bytes(in, b.data(), static_cast<std::size_t>(b.size()) * sizeof(double), offset);
        model.weights.push_back(std::move(w));
        model.biases.push_back(std::move(b));
    }
    if (cfg.batch_norm) {
        for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
            const int width = cfg.hidden[l];
            for (std::vector<VecX>* dst :
                 {&model.bn_gamma, &model.bn_beta, &model.bn_mean, &model.bn_var}) {
                VecX v(width);
                read_bytes(in, v.data(), static_cast<std::size_t>(width) * sizeof(double), offset);
                dst->push_back(std::move(v));
            }
        }
    }
    return model;
}

void write_loss_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw io_error("model: cannot open '" + path + "' for writing");
    }
    out << "epoch,lr,train_total,train_position,train_orientation,"
           "test_total,test_position,test_orientation\n";
    out.precision(12);
    for (const EpochStats& s : history) {
        out << s.epoch << ',' << s.lr << ',' << s.train.total << ',' << s.train.position << ','
            << s.train.orientation << ',' << s.test.total << ',' << s.test.position << ','
            << s.test.orientation << '\n';
    }
    if (!out) {
        throw io_error("model: write failed for '" + path + "'");
    }
}

} // namespace magtrack
