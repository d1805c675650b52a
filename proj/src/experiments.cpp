#include "magtrack/experiments.hpp"

#include "magtrack/providers.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace magtrack {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// --- strict JSON <-> config round trip ------------------------------------

void expect_keys(const json& j, const std::string& path,
                 std::initializer_list<const char*> keys) {
    if (!j.is_object()) {
        throw config_error("config: " + path + " must be an object");
    }
    for (const auto& item : j.items()) {
        if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
                return item.key() == k;
            }) == keys.end()) {
            throw config_error("config: unknown key " + path + "." + item.key());
        }
    }
}

template <typename T>
T field(const json& j, const std::string& path, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error("config: " + path + "." + key + ": " + e.what());
    }
}

json box_to_json(const Box& b) {
    return json{{"lo", {b.lo.x(), b.lo.y(), b.lo.z()}},
                {"hi", {b.hi.x(), b.hi.y(), b.hi.z()}}};
}

Box box_from_json(const json& j, const std::string& path) {
    expect_keys(j, path, {"lo", "hi"});
    const auto lo = field<std::vector<double>>(j, path, "lo");
    const auto hi = field<std::vector<double>>(j, path, "hi");
    if (lo.size() != 3 || hi.size() != 3) {
        throw config_error("config: " + path + ": lo/hi must have 3 components");
    }
    Box b;
    b.lo = Vec3(lo[0], lo[1], lo[2]);
    b.hi = Vec3(hi[0], hi[1], hi[2]);
    return b;
}

json config_to_json(const ExperimentConfig& c) {
    json sweep = json::object();
    for (const auto& [count, path] : c.eval.sensor_sweep) {
        sweep[std::to_string(count)] = path;
    }
    return json{
        {"magnet",
         {{"shape", c.magnet.shape},
          {"moment", c.magnet.moment},
          {"radius", c.magnet.radius},
          {"height", c.magnet.height},
          {"magnetization", c.magnet.magnetization}}},
        {"sensors", c.sensors},
        {"source", c.source},
        {"volume", box_to_json(c.volume)},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"mlp",
         {{"hidden", c.mlp.hidden},
          {"batch_norm", c.mlp.batch_norm},
          {"input", c.mlp.input == MlpConfig::InputKind::Cbrt ? "cbrt" : "raw"}}},
        {"gen", {{"samples", c.gen.samples}, {"csv", c.gen.csv}}},
        {"train",
         {{"epochs", c.train.schedule.epochs},
          {"batch", c.train.schedule.batch_size},
          {"lr", c.train.schedule.lr},
          {"lr_decay", c.train.schedule.lr_decay},
          {"eta", c.train.schedule.eta},
          {"samples_per_epoch", c.train.samples_per_epoch},
          {"test_samples", c.train.test_samples},
          {"mode", c.train.mode},
          {"dataset", c.train.dataset}}},
        {"eval",
         {{"method", c.eval.method},
          {"cases", c.eval.cases},
          {"init_dp", c.eval.init_dp},
          {"init_dtheta", c.eval.init_dtheta},
          {"iters", c.eval.iters},
          {"mlp_samples", c.eval.mlp_samples},
          {"model", c.eval.model},
          {"truth_as_prediction", c.eval.truth_as_prediction},
          {"sensor_sweep", sweep}}},
        {"track",
         {{"method", c.track.method},
          {"model", c.track.model},
          {"init_dp", c.track.init_dp},
          {"init_dtheta", c.track.init_dtheta},
          {"t_reading", c.track.t_reading},
          {"noise", c.track.noise}}},
        {"bench",
         {{"reps", c.bench.reps}, {"iters", c.bench.iters}, {"model", c.bench.model}}},
        {"tune",
         {{"target_disp_mm", c.tune.target_disp_mm},
          {"target_rot_deg", c.tune.target_rot_deg},
          {"trials", c.tune.trials}}},
        {"opt",
         {{"max_iter", c.opt.max_iter},
          {"memory", c.opt.memory},
          {"grad_tol", c.opt.grad_tol},
          {"armijo_c", c.opt.armijo_c},
          {"ls_shrink", c.opt.ls_shrink},
          {"ls_max_trials", c.opt.ls_max_trials}}},
        {"noise",
         {{"sigma_xy", c.noise.sigma_xy},
          {"sigma_z", c.noise.sigma_z},
          {"drift_std", {c.noise.drift_std.x(), c.noise.drift_std.y(), c.noise.drift_std.z()}},
          {"drift_period", c.noise.drift_period}}},
        {"traj",
         {{"n_total", c.traj.n_total},
          {"n_sample", c.traj.n_sample},
          {"lambda", c.traj.lambda},
          {"frequency", c.traj.frequency}}},
    };
}

ExperimentConfig config_from_json(const json& j) {
    expect_keys(j, "", {"magnet", "sensors", "source", "volume", "seed", "output_dir", "mlp",
                        "gen", "train", "eval", "track", "bench", "tune", "opt", "noise",
                        "traj"});
    ExperimentConfig c;

    const json& jm = j.at("magnet");
    expect_keys(jm, "magnet", {"shape", "moment", "radius", "height", "magnetization"});
    c.magnet.shape = field<std::string>(jm, "magnet", "shape");
    c.magnet.moment = field<double>(jm, "magnet", "moment");
    c.magnet.radius = field<double>(jm, "magnet", "radius");
    c.magnet.height = field<double>(jm, "magnet", "height");
    c.magnet.magnetization = field<double>(jm, "magnet", "magnetization");

    c.sensors = field<int>(j, "", "sensors");
    c.source = field<std::string>(j, "", "source");
    c.volume = box_from_json(j.at("volume"), "volume");
    c.seed = field<std::uint64_t>(j, "", "seed");
    c.output_dir = field<std::string>(j, "", "output_dir");

    const json& jn = j.at("mlp");
    expect_keys(jn, "mlp", {"hidden", "batch_norm", "input"});
    c.mlp.hidden = field<std::vector<int>>(jn, "mlp", "hidden");
    c.mlp.batch_norm = field<bool>(jn, "mlp", "batch_norm");
    const std::string input = field<std::string>(jn, "mlp", "input");
    if (input == "cbrt") {
        c.mlp.input = MlpConfig::InputKind::Cbrt;
    } else if (input == "raw") {
        c.mlp.input = MlpConfig::InputKind::Raw;
    } else {
        throw config_error("config: mlp.input must be cbrt or raw, got " + input);
    }

    const json& jg = j.at("gen");
    expect_keys(jg, "gen", {"samples", "csv"});
    c.gen.samples = field<int>(jg, "gen", "samples");
    c.gen.csv = field<bool>(jg, "gen", "csv");

    const json& jt = j.at("train");
    expect_keys(jt, "train",
                {"epochs", "batch", "lr", "lr_decay", "eta", "samples_per_epoch",
                 "test_samples", "mode", "dataset"});
    c.train.schedule.epochs = field<int>(jt, "train", "epochs");
    c.train.schedule.batch_size = field<int>(jt, "train", "batch");
    c.train.schedule.lr = field<double>(jt, "train", "lr");
    c.train.schedule.lr_decay = field<double>(jt, "train", "lr_decay");
    c.train.schedule.eta = field<double>(jt, "train", "eta");
    c.train.samples_per_epoch = field<int>(jt, "train", "samples_per_epoch");
    c.train.test_samples = field<int>(jt, "train", "test_samples");
    c.train.mode = field<std::string>(jt, "train", "mode");
    c.train.dataset = field<std::string>(jt, "train", "dataset");

    const json& je = j.at("eval");
    expect_keys(je, "eval",
                {"method", "cases", "init_dp", "init_dtheta", "iters", "mlp_samples", "model",
                 "truth_as_prediction", "sensor_sweep"});
    c.eval.method = field<std::string>(je, "eval", "method");
    c.eval.cases = field<int>(je, "eval", "cases");
    c.eval.init_dp = field<std::vector<double>>(je, "eval", "init_dp");
    c.eval.init_dtheta = field<std::vector<double>>(je, "eval", "init_dtheta");
    c.eval.iters = field<std::vector<int>>(je, "eval", "iters");
    c.eval.mlp_samples = field<int>(je, "eval", "mlp_samples");
    c.eval.model = field<std::string>(je, "eval", "model");
    c.eval.truth_as_prediction = field<bool>(je, "eval", "truth_as_prediction");
    c.eval.sensor_sweep.clear();
    for (const auto& item : je.at("sensor_sweep").items()) {
        int count = 0;
        try {
            count = std::stoi(item.key());
        } catch (const std::exception&) {
            throw config_error("config: eval.sensor_sweep key must be a sensor count, got " +
                               item.key());
        }
        if (!item.value().is_string()) {
            throw config_error("config: eval.sensor_sweep." + item.key() +
                               " must be a model path");
        }
        c.eval.sensor_sweep[count] = item.value().get<std::string>();
    }

    const json& jk = j.at("track");
    expect_keys(jk, "track", {"method", "model", "init_dp", "init_dtheta", "t_reading", "noise"});
    c.track.method = field<std::string>(jk, "track", "method");
    c.track.model = field<std::string>(jk, "track", "model");
    c.track.init_dp = field<double>(jk, "track", "init_dp");
    c.track.init_dtheta = field<double>(jk, "track", "init_dtheta");
    c.track.t_reading = field<double>(jk, "track", "t_reading");
    c.track.noise = field<bool>(jk, "track", "noise");

    const json& jb = j.at("bench");
    expect_keys(jb, "bench", {"reps", "iters", "model"});
    c.bench.reps = field<int>(jb, "bench", "reps");
    c.bench.iters = field<std::vector<int>>(jb, "bench", "iters");
    c.bench.model = field<std::string>(jb, "bench", "model");

    const json& ju = j.at("tune");
    expect_keys(ju, "tune", {"target_disp_mm", "target_rot_deg", "trials"});
    c.tune.target_disp_mm = field<double>(ju, "tune", "target_disp_mm");
    c.tune.target_rot_deg = field<double>(ju, "tune", "target_rot_deg");
    c.tune.trials = field<int>(ju, "tune", "trials");

    const json& jo = j.at("opt");
    expect_keys(jo, "opt",
                {"max_iter", "memory", "grad_tol", "armijo_c", "ls_shrink", "ls_max_trials"});
    c.opt.max_iter = field<int>(jo, "opt", "max_iter");
    c.opt.memory = field<int>(jo, "opt", "memory");
    c.opt.grad_tol = field<double>(jo, "opt", "grad_tol");
    c.opt.armijo_c = field<double>(jo, "opt", "armijo_c");
    c.opt.ls_shrink = field<double>(jo, "opt", "ls_shrink");
    c.opt.ls_max_trials = field<int>(jo, "opt", "ls_max_trials");

    const json& jz = j.at("noise");
    expect_keys(jz, "noise", {"sigma_xy", "sigma_z", "drift_std", "drift_period"});
    c.noise.sigma_xy = field<double>(jz, "noise", "sigma_xy");
    c.noise.sigma_z = field<double>(jz, "noise", "sigma_z");
    const auto drift = field<std::vector<double>>(jz, "noise", "drift_std");
    if (drift.size() != 3) {
        throw config_error("config: noise.drift_std must have 3 components");
    }
    c.noise.drift_std = Vec3(drift[0], drift[1], drift[2]);
    c.noise.drift_period = field<int>(jz, "noise", "drift_period");

    const json& jj = j.at("traj");
    expect_keys(jj, "traj", {"n_total", "n_sample", "lambda", "frequency"});
    c.traj.n_total = field<int>(jj, "traj", "n_total");
    c.traj.n_sample = field<int>(jj, "traj", "n_sample");
    c.traj.lambda = field<double>(jj, "traj", "lambda");
    c.traj.frequency = field<double>(jj, "traj", "frequency");

    c.mlp.input_dim = 3 * c.sensors;
    return c;
}

// --- filesystem helpers ----------------------------------------------------

fs::path ensure_output_dir(const ExperimentConfig& cfg) {
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw io_error("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    return dir;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw io_error("cannot write " + path.string());
    }
    out << std::setprecision(12);
    return out;
}

void write_report(const fs::path& path, json report, const ExperimentConfig& cfg) {
    report["config"] = config_to_json(cfg);
    auto out = open_out(path);
    out << report.dump(2) << '\n';
    if (!out) {
        throw io_error("failed writing " + path.string());
    }
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

// --- shared experiment plumbing -------------------------------------------

SamplerConfig make_sampler(const ExperimentConfig& cfg) {
    SamplerConfig sampler;
    sampler.volume = cfg.volume;
    return sampler;
}

SourceKind source_kind(const ExperimentConfig& cfg) {
    return source_kind_from_string(cfg.source);
}

MlpModel load_model_checked(const std::string& path, int sensors) {
    MlpModel model = load_mlp(path);
    if (model.cfg.input_dim != 3 * sensors) {
        throw config_error("model " + path + " expects " +
                           std::to_string(model.cfg.input_dim / 3) + " sensors, config has " +
                           std::to_string(sensors));
    }
    return model;
}

json stats_json(const ErrorStats& s) {
    return json{{"mean", s.mean}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
}

json series_stats(std::vector<double> values) {
    const double mean =
        std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return json{{"median", quantile_linear(values, 0.5)},
                {"mean", mean},
                {"variance", var},
                {"p10", quantile_linear(values, 0.1)},
                {"p90", quantile_linear(values, 0.9)}};
}

void write_pose_csv_header(std::ofstream& out, int sensors) {
    out << "t,px,py,pz,ox,oy,oz";
    for (int k = 0; k < sensors; ++k) {
        out << ",B" << k << "x,B" << k << "y,B" << k << "z";
    }
    out << '\n';
}

} // namespace

// --- config API -------------------------------------------------------------

MagnetSpec MagnetConfig::to_spec() const {
    if (shape == "sphere") {
        return MagnetSpec::sphere(moment);
    }
    if (shape == "cylinder") {
        return MagnetSpec::cylinder(radius, height, magnetization);
    }
    throw config_error("config: magnet.shape must be sphere or cylinder, got " + shape);
}

void ExperimentConfig::validate() const {
    if (sensors != 4 && sensors != 8 && sensors != 12 && sensors != 16) {
        throw config_error("config: sensors must be 4, 8, 12, or 16");
    }
    if (source != "dipole" && source != "fem-surrogate") {
        throw config_error("config: source must be dipole or fem-surrogate");
    }
    if (!volume.valid()) {
        throw config_error("config: volume extents must be positive");
    }
    magnet.to_spec();
    if (mlp.input_dim != 3 * sensors) {
        throw config_error("config: mlp input dimension must be 3x the sensor count");
    }
    mlp.validate();
    if (gen.samples <= 0) {
        throw config_error("config: gen.samples must be positive");
    }
    const TrainConfig& s = train.schedule;
    if (s.epochs <= 0 || s.batch_size <= 0 || s.lr <= 0.0 || s.lr_decay <= 0.0 ||
        s.lr_decay > 1.0 || s.eta < 0.0) {
        throw config_error("config: invalid train schedule");
    }
    if (train.samples_per_epoch <= 0 || train.test_samples <= 0) {
        throw config_error("config: train sample counts must be positive");
    }
    if (train.mode != "generator" && train.mode != "dataset") {
        throw config_error("config: train.mode must be generator or dataset");
    }
    if (train.mode == "dataset" && train.dataset.empty()) {
        throw config_error("config: train.mode=dataset requires train.dataset");
    }
    if (eval.method != "opt" && eval.method != "mlp") {
        throw config_error("config: eval.method must be opt or mlp");
    }
    if (eval.cases <= 0 || eval.mlp_samples <= 0) {
        throw config_error("config: eval counts must be positive");
    }
    if (eval.init_dp.empty() || eval.init_dtheta.empty() || eval.iters.empty()) {
        throw config_error("config: eval sweep grids must be non-empty");
    }
    for (double dp : eval.init_dp) {
        if (dp < 0.0) throw config_error("config: eval.init_dp must be non-negative");
    }
    for (double dt : eval.init_dtheta) {
        if (dt < 0.0 || dt > 180.0) {
            throw config_error("config: eval.init_dtheta must lie in [0, 180]");
        }
    }
    for (int it : eval.iters) {
        if (it <= 0) throw config_error("config: eval.iters must be positive");
    }
    for (const auto& [count, path] : eval.sensor_sweep) {
        if (count != 4 && count != 8 && count != 12 && count != 16) {
            throw config_error("config: eval.sensor_sweep counts must be 4, 8, 12, or 16");
        }
        if (path.empty()) {
            throw config_error("config: eval.sensor_sweep model path must be non-empty");
        }
    }
    if (track.method != "opt" && track.method != "mlp") {
        throw config_error("config: track.method must be opt or mlp");
    }
    if (track.init_dp < 0.0 || track.init_dtheta < 0.0 || track.init_dtheta > 180.0) {
        throw config_error("config: invalid track perturbation");
    }
    if (track.t_reading < 0.0) {
        throw config_error("config: track.t_reading must be non-negative");
    }
    if (bench.reps < 1000) {
        throw config_error("config: bench.reps must be at least 1000");
    }
    if (bench.iters.empty()) {
        throw config_error("config: bench.iters must be non-empty");
    }
    for (int it : bench.iters) {
        if (it <= 0) throw config_error("config: bench.iters must be positive");
    }
    if (tune.target_disp_mm <= 0.0 || tune.target_rot_deg <= 0.0 || tune.trials <= 0) {
        throw config_error("config: invalid tune targets");
    }
    if (opt.max_iter <= 0 || opt.memory <= 0 || opt.grad_tol < 0.0 || opt.armijo_c <= 0.0 ||
        opt.armijo_c >= 1.0 || opt.ls_shrink <= 0.0 || opt.ls_shrink >= 1.0 ||
        opt.ls_max_trials <= 0) {
        throw config_error("config: invalid opt settings");
    }
    noise.validate();
    traj.validate();
}

MagnetSpec ExperimentConfig::magnet_spec() const { return magnet.to_spec(); }

SensorArray ExperimentConfig::sensor_array() const {
    return SensorArray::grid_4x4().subset(sensors);
}

std::unique_ptr<FieldSource2D> ExperimentConfig::make_source() const {
    const MagnetSpec spec = magnet_spec();
    if (source == "dipole") {
        return std::make_unique<AnalyticSource2D>(
            MagnetSpec::sphere(equivalent_dipole_moment(spec)));
    }
    return std::make_unique<AnalyticSource2D>(spec);
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: parse failure: ") + e.what());
    }
    json merged = config_to_json(ExperimentConfig{});
    merged.merge_patch(doc);
    ExperimentConfig cfg = config_from_json(merged);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    json merged = config_to_json(ExperimentConfig{});
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) {
            throw io_error("cannot read config file " + path);
        }
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw config_error("config: " + path + ": " + e.what());
        }
        merged.merge_patch(doc);
    }
    for (const std::string& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw config_error("override must look like key.path=value, got " + item);
        }
        std::string pointer = "/" + item.substr(0, eq);
        std::replace(pointer.begin(), pointer.end(), '.', '/');
        const std::string raw = item.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw; // unquoted strings pass through verbatim
        }
        try {
            merged[json::json_pointer(pointer)] = value;
        } catch (const json::exception& e) {
            throw config_error("override " + item + ": " + e.what());
        }
    }
    if (const char* env_dir = std::getenv("MAGTRACK_OUTPUT_DIR")) {
        if (*env_dir != '\0') {
            merged["output_dir"] = std::string(env_dir);
        }
    }
    ExperimentConfig cfg = config_from_json(merged);
    cfg.validate();
    return cfg;
}

std::string resolved_config_json(const ExperimentConfig& cfg) {
    return config_to_json(cfg).dump(2);
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot hash " + path);
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

void parallel_for(int n, const std::function<void(int)>& body) {
    if (n <= 0) return;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(n)));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::exception_ptr error;
    auto run = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// --- commands ---------------------------------------------------------------

void cmd_gen_data(const ExperimentConfig& cfg) {
    const fs::path dir = ensure_output_dir(cfg);
    const MagnetSpec spec = cfg.magnet_spec();
    const SensorArray array = cfg.sensor_array();
    const auto source = cfg.make_source();

    const Dataset data = generate_dataset(cfg.gen.samples, spec, array, *source,
                                          source_kind(cfg), make_sampler(cfg), cfg.seed);
    const fs::path file = dir / "dataset.bin";
    save_dataset(data, file.string());
    if (cfg.gen.csv) {
        export_dataset_csv(data, (dir / "dataset.csv").string());
    }

    json report{{"command", "gen-data"},
                {"samples", data.count()},
                {"seed", cfg.seed},
                {"source", cfg.source},
                {"file", file.string()},
                {"file_hash", hash_hex(file_hash(file.string()))}};
    write_report(dir / "gen_data_report.json", std::move(report), cfg);
}

void cmd_train(const ExperimentConfig& cfg) {
    const fs::path dir = ensure_output_dir(cfg);
    const MagnetSpec spec = cfg.magnet_spec();
    const SensorArray array = cfg.sensor_array();
    const auto source = cfg.make_source();
    const SamplerConfig sampler = make_sampler(cfg);

    RngStream init_rng = RngStream::substream(cfg.seed, 0, 40);
    MlpModel model = init_mlp(cfg.mlp, init_rng);

    Dataset stored; // keeps the dataset alive for the provider
    std::unique_ptr<BatchProvider> provider;
    if (cfg.train.mode == "generator") {
        provider = std::make_unique<GeneratorProvider>(spec, array, *source, sampler,
                                                       cfg.mlp.input,
                                                       cfg.train.samples_per_epoch, cfg.seed);
    } else {
        stored = load_dataset(cfg.train.dataset);
        if (stored.input_dim() != cfg.mlp.input_dim) {
            throw config_error("dataset " + cfg.train.dataset + " has input dimension " +
                               std::to_string(stored.input_dim()) + ", model expects " +
                               std::to_string(cfg.mlp.input_dim));
        }
        provider = std::make_unique<DatasetProvider>(stored, cfg.mlp.input, cfg.seed);
    }

    const Dataset test = generate_dataset(cfg.train.test_samples, spec, array, *source,
                                          source_kind(cfg), sampler, cfg.seed + 1);
    const auto [test_x, test_y] = dataset_matrices(test, cfg.mlp.input);

    const PoseLossTerms initial = evaluate_mlp(model, test_x, test_y, cfg.train.schedule.eta);
    const TrainResult result = train_mlp(model, *provider, test_x, test_y, cfg.train.schedule);

    const fs::path model_file = dir / "model.mmlp";
    save_mlp(model, model_file.string());
    write_loss_history_csv(result.history, (dir / "loss_history.csv").string());

    const PoseLossTerms last = result.history.back().test;
    // A run that fails to halve the initial test loss is flagged; the raw-input
    // ablation lands here by design.
    const bool converged = last.total < 0.5 * initial.total;
    json report{{"command", "train"},
                {"epochs", static_cast<int>(result.history.size())},
                {"initial_test_loss", initial.total},
                {"final_test_loss", last.total},
                {"final_train_loss", result.history.back().train.total},
                {"converged", converged},
                {"model", model_file.string()},
                {"model_hash", hash_hex(file_hash(model_file.string()))}};
    write_report(dir / "train_report.json", std::move(report), cfg);
}

namespace {

struct OptRow {
    int case_id = 0;
    double init_dp = 0.0;
    double init_dtheta = 0.0;
    int max_iter = 0;
    double e_p_mm = 0.0;
    double e_theta_deg = 0.0;
    int iters_used = 0;
    double wall_time_us = 0.0;
};

void eval_opt_sweep(const ExperimentConfig& cfg, const fs::path& dir) {
    const MagnetSpec spec = cfg.magnet_spec();
    const SensorArray array = cfg.sensor_array();
    const auto source = cfg.make_source();
    const SamplerConfig sampler = make_sampler(cfg);
    const double moment = equivalent_dipole_moment(spec);

    struct Condition {
        double dp, dtheta;
    };
    std::vector<Condition> conditions;
    for (double dp : cfg.eval.init_dp) {
        for (double dt : cfg.eval.init_dtheta) {
            conditions.push_back({dp, dt});
        }
    }
    const int n_cond = static_cast<int>(conditions.size());
    const int n_bud = static_cast<int>(cfg.eval.iters.size());
    std::vector<OptRow> rows(static_cast<std::size_t>(cfg.eval.cases) *
                             static_cast<std::size_t>(n_cond) * static_cast<std::size_t>(n_bud));

    // Cases are paired: every condition and budget sees the same truth pose
    // and, per condition, the same perturbed init.
    parallel_for(cfg.eval.cases, [&](int case_id) {
        RngStream pose_rng = RngStream::substream(cfg.seed, static_cast<std::uint64_t>(case_id), 20);
        RngStream synth_rng =
            RngStream::substream(cfg.seed, static_cast<std::uint64_t>(case_id), 21);
        const Pose truth = sample_pose(sampler, spec, array, pose_rng);
        const VecX readings = synthesize_array(truth, array, *source, synth_rng);
        const auto objective = [&](const VecX& params, VecX* grad) {
            return dipole_objective(params, readings, array, moment, grad);
        };
        for (int ci = 0; ci < n_cond; ++ci) {
            RngStream init_rng = RngStream::substream(
                cfg.seed, static_cast<std::uint64_t>(case_id), 50 + static_cast<std::uint64_t>(ci));
            const Pose init = perturb_pose(truth, conditions[static_cast<std::size_t>(ci)].dp,
                                           conditions[static_cast<std::size_t>(ci)].dtheta,
                                           init_rng);
            const VecX x0 = pose_to_params(init);
            for (int bi = 0; bi < n_bud; ++bi) {
                OptConfig oc = cfg.opt;
                oc.max_iter = cfg.eval.iters[static_cast<std::size_t>(bi)];
                const auto t0 = Clock::now();
                const LbfgsResult solved = lbfgs_minimize(objective, x0, oc);
                const auto t1 = Clock::now();
                const Pose est = params_to_pose(solved.x);
                OptRow row;
                row.case_id = case_id;
                row.init_dp = conditions[static_cast<std::size_t>(ci)].dp;
                row.init_dtheta = conditions[static_cast<std::size_t>(ci)].dtheta;
                row.max_iter = oc.max_iter;
                row.e_p_mm = (est.p - truth.p).norm() * 1e3;
                row.e_theta_deg = angle_between_deg(est.o, truth.o);
                row.iters_used = solved.iterations;
                row.wall_time_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
                rows[(static_cast<std::size_t>(case_id) * static_cast<std::size_t>(n_cond) +
                      static_cast<std::size_t>(ci)) *
                         static_cast<std::size_t>(n_bud) +
                     static_cast<std::size_t>(bi)] = row;
            }
        }
    });

    auto csv = open_out(dir / "eval_opt_cases.csv");
    csv << "case_id,init_dp,init_dtheta,max_iter,e_p_mm,e_theta_deg,iters_used,wall_time_us\n";
    for (const OptRow& r : rows) {
        csv << r.case_id << ',' << r.init_dp << ',' << r.init_dtheta << ',' << r.max_iter << ','
            << r.e_p_mm << ',' << r.e_theta_deg << ',' << r.iters_used << ',' << r.wall_time_us
            << '\n';
    }

    json summary = json::array();
    for (int ci = 0; ci < n_cond; ++ci) {
        for (int bi = 0; bi < n_bud; ++bi) {
            std::vector<double> ep, eth;
            for (const OptRow& r : rows) {
                if (r.init_dp == conditions[static_cast<std::size_t>(ci)].dp &&
                    r.init_dtheta == conditions[static_cast<std::size_t>(ci)].dtheta &&
                    r.max_iter == cfg.eval.iters[static_cast<std::size_t>(bi)]) {
                    ep.push_back(r.e_p_mm);
                    eth.push_back(r.e_theta_deg);
                }
            }
            summary.push_back(json{{"init_dp", conditions[static_cast<std::size_t>(ci)].dp},
                                   {"init_dtheta", conditions[static_cast<std::size_t>(ci)].dtheta},
                                   {"max_iter", cfg.eval.iters[static_cast<std::size_t>(bi)]},
                                   {"cases", static_cast<int>(ep.size())},
                                   {"e_p_mm",
                                    {{"median", quantile_linear(ep, 0.5)},
                                     {"q3", quantile_linear(ep, 0.75)}}},
                                   {"e_theta_deg",
                                    {{"median", quantile_linear(eth, 0.5)},
                                     {"q3", quantile_linear(eth, 0.75)}}}});
        }
    }
    json report{{"command", "eval"}, {"method", "opt"}, {"conditions", std::move(summary)}};
    write_report(dir / "eval_report.json", std::move(report), cfg);
}

json eval_mlp_once(const ExperimentConfig& cfg, const MlpModel& model, const SensorArray& array,
                   const fs::path& cases_csv) {
    const MagnetSpec spec = cfg.magnet_spec();
    const auto source = cfg.make_source();
    SamplerConfig sampler = make_sampler(cfg);
    const Dataset data = generate_dataset(cfg.eval.mlp_samples, spec, array, *source,
                                          source_kind(cfg), sampler, cfg.seed + 2);

    std::vector<Pose> truth, pred;
    truth.reserve(data.samples.size());
    pred.reserve(data.samples.size());
    int invalid_orientation = 0;
    for (const Sample& s : data.samples) {
        truth.push_back(s.label);
        if (cfg.eval.truth_as_prediction) {
            pred.push_back(s.label);
            continue;
        }
        const PosePrediction p = predict_pose(model, s.raw);
        if (!p.orientation_valid) ++invalid_orientation;
        pred.push_back(p.pose);
    }

    if (!cases_csv.empty()) {
        auto csv = open_out(cases_csv);
        csv << "case_id,e_p_mm,e_theta_deg\n";
        for (std::size_t i = 0; i < truth.size(); ++i) {
            csv << i << ',' << (truth[i].p - pred[i].p).norm() * 1e3 << ','
                << angle_between_deg(truth[i].o, pred[i].o) << '\n';
        }
    }

    const TrackingErrors errors = summarize_errors(truth, pred);
    return json{{"samples", static_cast<int>(truth.size())},
                {"invalid_orientation", invalid_orientation},
                {"e_p_mm", stats_json(errors.position_mm)},
                {"e_theta_deg", stats_json(errors.angle_deg)}};
}

void eval_mlp(const ExperimentConfig& cfg, const fs::path& dir) {
    json report{{"command", "eval"}, {"method", "mlp"}};

    if (!cfg.eval.model.empty() || cfg.eval.truth_as_prediction) {
        MlpModel model;
        if (cfg.eval.truth_as_prediction && cfg.eval.model.empty()) {
            RngStream rng = RngStream::substream(cfg.seed, 0, 41);
            model = init_mlp(cfg.mlp, rng); // placeholder, predictions unused
        } else {
            model = load_model_checked(cfg.eval.model, cfg.sensors);
        }
        report["summary"] =
            eval_mlp_once(cfg, model, cfg.sensor_array(), dir / "eval_mlp_cases.csv");
    } else if (cfg.eval.sensor_sweep.empty()) {
        throw config_error("eval.method=mlp requires eval.model or eval.sensor_sweep");
    }

    if (!cfg.eval.sensor_sweep.empty()) {
        json sweep = json::array();
        double prev_median = -1.0;
        bool monotone = true;
        ExperimentConfig sub = cfg;
        for (const auto& [count, path] : cfg.eval.sensor_sweep) {
            sub.sensors = count;
            sub.mlp.input_dim = 3 * count;
            const MlpModel model = load_model_checked(path, count);
            json one = eval_mlp_once(sub, model, sub.sensor_array(), fs::path());
            const double median = one["e_p_mm"]["median"].get<double>();
            // Map iterates counts ascending; medians should not increase.
            if (prev_median >= 0.0 && median > prev_median) monotone = false;
            prev_median = median;
            one["sensors"] = count;
            one["model"] = path;
            sweep.push_back(std::move(one));
        }
        report["sensor_sweep"] = std::move(sweep);
        report["sensor_sweep_monotone_non_increasing"] = monotone;
    }

    write_report(dir / "eval_report.json", std::move(report), cfg);
}

} // namespace

void cmd_eval(const ExperimentConfig& cfg) {
    const fs::path dir = ensure_output_dir(cfg);
    if (cfg.eval.method == "opt") {
        eval_opt_sweep(cfg, dir);
    } else {
        eval_mlp(cfg, dir);
    }
}

void cmd_track(const ExperimentConfig& cfg) {
    const fs::path dir = ensure_output_dir(cfg);
    const MagnetSpec spec = cfg.magnet_spec();
    const SensorArray array = cfg.sensor_array();
    const auto source = cfg.make_source();

    RngStream traj_rng = RngStream::substream(cfg.seed, 0, 60);
    const Trajectory traj = generate_trajectory(cfg.traj, cfg.volume, traj_rng);
    RngStream read_rng = RngStream::substream(cfg.seed, 0, 61);
    std::vector<VecX> readings =
        simulate_async_readings(traj, array, *source, cfg.track.t_reading, read_rng);
    if (cfg.track.noise) {
        NoiseModel noise(cfg.noise, splitmix64(cfg.seed ^ 0x6ee5u));
        for (VecX& r : readings) r = noise.apply(r);
    }

    {
        auto csv = open_out(dir / "trajectory.csv");
        write_pose_csv_header(csv, array.count());
        for (int i = 0; i < traj.size(); ++i) {
            const Pose& pose = traj.poses[static_cast<std::size_t>(i)];
            csv << traj.t[static_cast<std::size_t>(i)] << ',' << pose.p.x() << ',' << pose.p.y()
                << ',' << pose.p.z() << ',' << pose.o.x() << ',' << pose.o.y() << ','
                << pose.o.z();
            const VecX& r = readings[static_cast<std::size_t>(i)];
            for (int k = 0; k < r.size(); ++k) csv << ',' << r[k];
            csv << '\n';
        }
    }

    std::vector<Pose> estimates;
    estimates.reserve(readings.size());
    int rejected = 0;
    int invalid_orientation = 0;
    bool accepted_inside = true;
    json method_detail;

    if (cfg.track.method == "opt") {
        RngStream init_rng = RngStream::substream(cfg.seed, 0, 63);
        const Pose init =
            perturb_pose(traj.poses.front(), cfg.track.init_dp, cfg.track.init_dtheta, init_rng);
        const TrackResult result =
            track_trajectory(readings, init, cfg.volume, array,
                             equivalent_dipole_moment(spec), cfg.opt);
        auto csv = open_out(dir / "track_steps.csv");
        csv << "step,t,accepted,iterations,e_p_mm,e_theta_deg\n";
        for (std::size_t i = 0; i < result.steps.size(); ++i) {
            const TrackStep& step = result.steps[i];
            estimates.push_back(step.estimate);
            if (!step.accepted) ++rejected;
            if (step.accepted && !cfg.volume.contains(step.estimate.p)) accepted_inside = false;
            csv << i << ',' << traj.t[i] << ',' << (step.accepted ? 1 : 0) << ','
                << step.iterations << ',' << (step.estimate.p - traj.poses[i].p).norm() * 1e3
                << ',' << angle_between_deg(step.estimate.o, traj.poses[i].o) << '\n';
        }
        method_detail = json{{"rejected_steps", rejected},
                             {"accepted_inside_space", accepted_inside}};
    } else {
        const MlpModel model = load_model_checked(cfg.track.model, cfg.sensors);
        Pose previous = traj.poses.front();
        auto csv = open_out(dir / "track_steps.csv");
        csv << "step,t,e_p_mm,e_theta_deg\n";
        for (std::size_t i = 0; i < readings.size(); ++i) {
            const PosePrediction p = predict_pose(model, readings[i]);
            Pose est = p.pose;
            if (!p.orientation_valid) {
                ++invalid_orientation;
                est.o = previous.o;
            }
            estimates.push_back(est);
            previous = est;
            csv << i << ',' << traj.t[i] << ',' << (est.p - traj.poses[i].p).norm() * 1e3 << ','
                << angle_between_deg(est.o, traj.poses[i].o) << '\n';
        }
        method_detail = json{{"invalid_orientation", invalid_orientation}};
    }

    const TrackingErrors errors = summarize_errors(traj.poses, estimates);
    json report{{"command", "track"},
                {"method", cfg.track.method},
                {"steps", traj.size()},
                {"e_p_mm", stats_json(errors.position_mm)},
                {"e_theta_deg", stats_json(errors.angle_deg)},
                {"detail", std::move(method_detail)}};
    write_report(dir / "track_report.json", std::move(report), cfg);
}

void cmd_bench_time(const ExperimentConfig& cfg) {
    const fs::path dir = ensure_output_dir(cfg);
    const MagnetSpec spec = cfg.magnet_spec();
    const SensorArray array = cfg.sensor_array();
    const auto source = cfg.make_source();

    MlpModel model;
    if (cfg.bench.model.empty()) {
        RngStream rng = RngStream::substream(cfg.seed, 0, 70);
        model = init_mlp(cfg.mlp, rng);
    } else {
        model = load_model_checked(cfg.bench.model, cfg.sensors);
    }

    RngStream pose_rng = RngStream::substream(cfg.seed, 0, 71);
    const Pose truth = sample_pose(make_sampler(cfg), spec, array, pose_rng);
    RngStream synth_rng = RngStream::substream(cfg.seed, 0, 72);
    const VecX readings = synthesize_array(truth, array, *source, synth_rng);
    RngStream init_rng = RngStream::substream(cfg.seed, 0, 73);
    const Pose init = perturb_pose(truth, 0.08, 10.0, init_rng);
    const VecX x0 = pose_to_params(init);
    const double moment = equivalent_dipole_moment(spec);
    const auto objective = [&](const VecX& params, VecX* grad) {
        return dipole_objective(params, readings, array, moment, grad);
    };

    for (int i = 0; i < 50; ++i) {
        volatile double sink = predict_pose(model, readings).pose.p.x();
        (void)sink;
        for (int budget : cfg.bench.iters) {
            OptConfig oc = cfg.opt;
            oc.max_iter = budget;
            volatile double sink2 = lbfgs_minimize(objective, x0, oc).f;
            (void)sink2;
        }
    }

    const int n_bud = static_cast<int>(cfg.bench.iters.size());
    std::vector<double> mlp_us(static_cast<std::size_t>(cfg.bench.reps));
    std::vector<std::vector<double>> opt_us(
        static_cast<std::size_t>(n_bud),
        std::vector<double>(static_cast<std::size_t>(cfg.bench.reps)));
    for (int rep = 0; rep < cfg.bench.reps; ++rep) {
        auto t0 = Clock::now();
        volatile double sink = predict_pose(model, readings).pose.p.x();
        (void)sink;
        auto t1 = Clock::now();
        mlp_us[static_cast<std::size_t>(rep)] =
            std::chrono::duration<double, std::micro>(t1 - t0).count();
        for (int bi = 0; bi < n_bud; ++bi) {
            OptConfig oc = cfg.opt;
            oc.max_iter = cfg.bench.iters[static_cast<std::size_t>(bi)];
            t0 = Clock::now();
            volatile double sink2 = lbfgs_minimize(objective, x0, oc).f;
            (void)sink2;
            t1 = Clock::now();
            opt_us[static_cast<std::size_t>(bi)][static_cast<std::size_t>(rep)] =
                std::chrono::duration<double, std::micro>(t1 - t0).count();
        }
    }

    {
        auto csv = open_out(dir / "bench_times.csv");
        csv << "rep,mlp_us";
        for (int budget : cfg.bench.iters) csv << ",lbfgs" << budget << "_us";
        csv << '\n';
        for (int rep = 0; rep < cfg.bench.reps; ++rep) {
            csv << rep << ',' << mlp_us[static_cast<std::size_t>(rep)];
            for (int bi = 0; bi < n_bud; ++bi) {
                csv << ',' << opt_us[static_cast<std::size_t>(bi)][static_cast<std::size_t>(rep)];
            }
            csv << '\n';
        }
    }

    json opt_stats = json::object();
    std::vector<double> medians;
    for (int bi = 0; bi < n_bud; ++bi) {
        json s = series_stats(opt_us[static_cast<std::size_t>(bi)]);
        medians.push_back(s["median"].get<double>());
        opt_stats[std::to_string(cfg.bench.iters[static_cast<std::size_t>(bi)])] = std::move(s);
    }
    const json mlp_stats = series_stats(mlp_us);
    bool scaling_monotone = true;
    for (std::size_t i = 1; i < medians.size(); ++i) {
        if (medians[i] <= medians[i - 1]) scaling_monotone = false;
    }
    json report{{"command", "bench-time"},
                {"reps", cfg.bench.reps},
                {"mlp_us", mlp_stats},
                {"lbfgs_us", std::move(opt_stats)},
                {"mlp_faster_than_first_budget",
                 mlp_stats["median"].get<double>() < medians.front()},
                {"iteration_scaling_monotone", scaling_monotone}};
    write_report(dir / "bench_report.json", std::move(report), cfg);
}

void cmd_tune_traj(const ExperimentConfig& cfg) {
    const fs::path dir = ensure_output_dir(cfg);

    struct Candidate {
        int n_sample = 0;
        double lambda = 0.0;
        double disp_mm = 0.0;
        double rot_deg = 0.0;
        double score = 0.0;
    };
    std::vector<Candidate> grid;
    for (int n_sample = 40; n_sample <= 340; n_sample += 20) {
        for (int li = 0; li <= 15; ++li) {
            Candidate c;
            c.n_sample = n_sample;
            c.lambda = 0.01 * li;
            grid.push_back(c);
        }
    }

    parallel_for(static_cast<int>(grid.size()), [&](int gi) {
        Candidate& cand = grid[static_cast<std::size_t>(gi)];
        TrajConfig tc = cfg.traj;
        tc.n_sample = cand.n_sample;
        tc.lambda = cand.lambda;
        double disp_sum = 0.0, rot_sum = 0.0;
        long steps = 0;
        for (int trial = 0; trial < cfg.tune.trials; ++trial) {
            RngStream rng = RngStream::substream(
                cfg.seed,
                static_cast<std::uint64_t>(gi) * static_cast<std::uint64_t>(cfg.tune.trials) +
                    static_cast<std::uint64_t>(trial),
                80);
            const Trajectory traj = generate_trajectory(tc, cfg.volume, rng);
            for (int i = 1; i < traj.size(); ++i) {
                disp_sum += (traj.poses[static_cast<std::size_t>(i)].p -
                             traj.poses[static_cast<std::size_t>(i - 1)].p)
                                .norm();
                rot_sum += angle_between_deg(traj.poses[static_cast<std::size_t>(i)].o,
                                             traj.poses[static_cast<std::size_t>(i - 1)].o);
                ++steps;
            }
        }
        cand.disp_mm = disp_sum / static_cast<double>(steps) * 1e3;
        cand.rot_deg = rot_sum / static_cast<double>(steps);
        cand.score = std::max(std::abs(cand.disp_mm / cfg.tune.target_disp_mm - 1.0),
                              std::abs(cand.rot_deg / cfg.tune.target_rot_deg - 1.0));
    });

    const Candidate best = *std::min_element(
        grid.begin(), grid.end(),
        [](const Candidate& a, const Candidate& b) { return a.score < b.score; });

    {
        auto csv = open_out(dir / "tune_traj_grid.csv");
        csv << "n_sample,lambda,mean_disp_mm,mean_rot_deg,score\n";
        for (const Candidate& c : grid) {
            csv << c.n_sample << ',' << c.lambda << ',' << c.disp_mm << ',' << c.rot_deg << ','
                << c.score << '\n';
        }
    }

    json report{{"command", "tune-traj"},
                {"target_disp_mm", cfg.tune.target_disp_mm},
                {"target_rot_deg", cfg.tune.target_rot_deg},
                {"best",
                 {{"n_sample", best.n_sample},
                  {"lambda", best.lambda},
                  {"mean_disp_mm", best.disp_mm},
                  {"mean_rot_deg", best.rot_deg},
                  {"within_20_percent", best.score <= 0.2}}}};
    write_report(dir / "tune_traj_report.json", std::move(report), cfg);
}

} // namespace magtrack
