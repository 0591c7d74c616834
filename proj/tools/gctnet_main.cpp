#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI/CLI.hpp>

#include "gctnet/analysis.hpp"
#include "gctnet/errors.hpp"
#include "gctnet/gradcheck.hpp"
#include "gctnet/harness.hpp"

namespace {

using namespace gctnet;

Shape4 parse_input_shape(const std::string& s) {
    int v[4];
    if (std::sscanf(s.c_str(), "%d,%d,%d,%d", &v[0], &v[1], &v[2], &v[3]) != 4)
        throw ConfigError("--input-shape must be N,C,H,W");
    for (int x : v)
        if (x < 1) throw ConfigError("--input-shape dimensions must be >= 1");
    return Shape4{v[0], v[1], v[2], v[3]};
}

struct CommonOverrides {
    std::string config_path;
    std::string placement;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

RunConfig load_with_overrides(const CommonOverrides& o) {
    RunConfig cfg = load_run_config(o.config_path);
    if (o.seed_set) cfg.train.seed = o.seed;
    if (!o.placement.empty()) cfg.placement = placement_from_string(o.placement);
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    return cfg;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"Gated channel transform training and analysis harness"};
    app.require_subcommand(1);

    CommonOverrides traino;
    CLI::App* train = app.add_subcommand("train", "train a network from a JSON config");
    train->add_option("--config", traino.config_path, "run config JSON")->required();
    train->add_option("--seed", traino.seed, "override train.seed")
        ->each([&traino](const std::string&) { traino.seed_set = true; });
    train->add_option("--placement", traino.placement,
                      "override placement (before_conv|before_bn|after_bn|none)");
    train->add_option("--out-dir", traino.out_dir, "override output directory");

    CommonOverrides evalo;
    std::string eval_ckpt;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--config", evalo.config_path, "run config JSON (dataset paths)")
        ->required();

    std::uint64_t gc_seed = 7;
    int gc_instances = 50;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient checks (64-bit)");
    gradcheck->add_option("--seed", gc_seed, "rng seed");
    gradcheck->add_option("--instances", gc_instances, "random instances per case")
        ->check(CLI::PositiveNumber);

    CommonOverrides ablateo;
    std::string axis;
    CLI::App* ablate = app.add_subcommand("ablate", "train every variant along one axis");
    ablate->add_option("--config", ablateo.config_path, "run config JSON")->required();
    ablate->add_option("--axis", axis, "embedding|normalization|adaptation|position")
        ->required();
    ablate->add_option("--seed", ablateo.seed, "override train.seed")
        ->each([&ablateo](const std::string&) { ablateo.seed_set = true; });

    CommonOverrides analyzeo;
    std::string analyze_ckpt;
    int analyze_batch = 256;
    CLI::App* analyze = app.add_subcommand("analyze", "gamma stats and variance ratios");
    analyze->add_option("--checkpoint", analyze_ckpt, "checkpoint file")->required();
    analyze->add_option("--config", analyzeo.config_path, "run config JSON (dataset paths)")
        ->required();
    analyze->add_option("--batch", analyze_batch, "probe batch size")->check(CLI::PositiveNumber);
    analyze->add_option("--out-dir", analyzeo.out_dir, "override output directory");

    std::string cost_spec, cost_shape = "1,3,224,224", cost_placement = "none", cost_out;
    CLI::App* cost = app.add_subcommand("count-cost", "parameter and multiply-add accounting");
    cost->add_option("--spec", cost_spec, "preset name or network spec JSON path")->required();
    cost->add_option("--input-shape", cost_shape, "N,C,H,W");
    cost->add_option("--placement", cost_placement, "transform insertion policy");
    cost->add_option("--out", cost_out, "write report JSON here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    if (*train) {
        const RunConfig cfg = load_with_overrides(traino);
        const TrainResult r = run_train(cfg);
        std::cout << "wrote " << r.metrics_path << " and " << r.checkpoint_path << "\n";
        if (!r.metrics.empty()) {
            const EpochMetrics& m = r.metrics.back();
            std::printf("final epoch %d: train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f\n",
                        m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc);
        }
        return kExitOk;
    }
    if (*eval) {
        const RunConfig cfg = load_with_overrides(evalo);
        const EvalResult r = run_eval(eval_ckpt, cfg);
        std::printf("val_loss %.6f val_acc %.6f over %d samples\n", r.loss, r.acc, r.count);
        return kExitOk;
    }
    if (*gradcheck) {
        const int bad = run_gradcheck(gc_seed, gc_instances, std::cout);
        return bad == 0 ? kExitOk : kExitNumericError;
    }
    if (*ablate) {
        const RunConfig cfg = load_with_overrides(ablateo);
        run_ablate(cfg, axis, std::cout);
        return kExitOk;
    }
    if (*analyze) {
        const RunConfig cfg = load_with_overrides(analyzeo);
        run_analyze(analyze_ckpt, cfg, analyze_batch, std::cout);
        return kExitOk;
    }
    if (*cost) {
        BuildOptions opt;
        opt.placement = placement_from_string(cost_placement);
        const nlohmann::json j = run_count_cost(cost_spec, opt, parse_input_shape(cost_shape));
        if (cost_out.empty()) {
            std::cout << j.dump(2) << "\n";
        } else {
            std::ofstream f(cost_out, std::ios::trunc);
            if (!f) throw DataError("cannot write " + cost_out);
            f << j.dump(2) << "\n";
            std::cout << "wrote " << cost_out << "\n";
        }
        return kExitOk;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const gctnet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return gctnet::kExitConfigError;
    } catch (const gctnet::ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return gctnet::kExitConfigError;
    } catch (const gctnet::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return gctnet::kExitDataError;
    } catch (const gctnet::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return gctnet::kExitNumericError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
