#include "magtrack/experiments.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;
    std::string model;
    std::int64_t seed = -1;
    int sensors = 0;
    std::string source;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "JSON experiment config")
        ->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", args.overrides,
                    "Override a config value, e.g. --set train.epochs=5");
    cmd->add_option("-o,--output-dir", args.output_dir, "Report directory");
    cmd->add_option("--seed", args.seed, "Master seed");
    cmd->add_option("--sensors", args.sensors, "Sensor count (4/8/12/16)");
    cmd->add_option("--source", args.source, "Data source (dipole | fem-surrogate)");
}

/// Flags become overrides so precedence stays config file < flags < env var.
magtrack::ExperimentConfig resolve(const CommonArgs& args, const char* model_key) {
    std::vector<std::string> overrides = args.overrides;
    if (!args.output_dir.empty()) overrides.push_back("output_dir=" + args.output_dir);
    if (args.seed >= 0) overrides.push_back("seed=" + std::to_string(args.seed));
    if (args.sensors > 0) overrides.push_back("sensors=" + std::to_string(args.sensors));
    if (!args.source.empty()) overrides.push_back("source=" + args.source);
    if (model_key != nullptr && !args.model.empty()) {
        overrides.push_back(std::string(model_key) + "=" + args.model);
    }
    return magtrack::load_experiment_config(args.config_path, overrides);
}

int run(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const magtrack::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const magtrack::io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const magtrack::divergence_error& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"magtrack: magnetic marker tracking experiments"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, track_args, bench_args, tune_args;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    add_common(gen, gen_args);

    CLI::App* train = app.add_subcommand("train", "Train the MLP regressor");
    add_common(train, train_args);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate the optimizer or an MLP");
    add_common(eval, eval_args);
    eval->add_option("-m,--model", eval_args.model, "Trained model file");

    CLI::App* track = app.add_subcommand("track", "Track a simulated trajectory");
    add_common(track, track_args);
    track->add_option("-m,--model", track_args.model, "Trained model file");

    CLI::App* bench = app.add_subcommand("bench-time", "Time MLP inference vs L-BFGS");
    add_common(bench, bench_args);
    bench->add_option("-m,--model", bench_args.model, "Trained model file");

    CLI::App* tune = app.add_subcommand("tune-traj", "Tune trajectory hyper-parameters");
    add_common(tune, tune_args);

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        return run([&] { magtrack::cmd_gen_data(resolve(gen_args, nullptr)); });
    }
    if (train->parsed()) {
        return run([&] { magtrack::cmd_train(resolve(train_args, nullptr)); });
    }
    if (eval->parsed()) {
        return run([&] { magtrack::cmd_eval(resolve(eval_args, "eval.model")); });
    }
    if (track->parsed()) {
        return run([&] { magtrack::cmd_track(resolve(track_args, "track.model")); });
    }
    if (bench->parsed()) {
        return run([&] { magtrack::cmd_bench_time(resolve(bench_args, "bench.model")); });
    }
    return run([&] { magtrack::cmd_tune_traj(resolve(tune_args, nullptr)); });
}
