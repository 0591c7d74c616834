#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gctnet/data.hpp"
#include "gctnet/network.hpp"
#include "gctnet/optim.hpp"

namespace gctnet {

struct DatasetConfig {
    std::string kind;                 // "mnist" | "cifar10"
    std::vector<std::string> train;   // mnist: [images, labels]; cifar10: batch files
    std::vector<std::string> test;    // same shape as train
    int train_limit = 0;              // 0 = use everything
    int val_limit = 0;
    Augment augment = Augment::None;
};

struct RunConfig {
    std::string network = "smallcnn";  // preset name or path to a spec JSON file
    DatasetConfig data;
    Placement placement = Placement::None;
    GctOptions gct;
    TrainConfig train;
    std::string out_dir = "run_out";
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& c);

// Resolves the network reference: preset name, or a path to a spec file.
NetworkSpec resolve_network_spec(const std::string& ref);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Full training run: writes metrics.csv (flushed per epoch), a wall-clock
// sidecar timing.csv, and checkpoint.bin under cfg.out_dir.
TrainResult run_train(const RunConfig& cfg);

struct EvalResult {
    double loss = 0.0;
    double acc = 0.0;
    int count = 0;
};

// Evaluation-mode pass of a checkpoint over the configured test split.
EvalResult run_eval(const std::string& checkpoint_path, const RunConfig& cfg);

// Prints one line per case; returns the number of unexpected outcomes.
int run_gradcheck(std::uint64_t seed, int instances, std::ostream& out);

// Gamma statistics + variance ratios of a checkpoint over a batch from the
// configured test split; writes analysis.csv and gamma_histogram.csv.
void run_analyze(const std::string& checkpoint_path, const RunConfig& cfg, int batch_size,
                 std::ostream& out);

// Trains one run per variant along the axis (embedding, normalization,
// adaptation, position) with a shared seed and schedule; writes a ranked
// CSV and returns its path.
std::string run_ablate(const RunConfig& cfg, const std::string& axis, std::ostream& out);

// Symbolic cost accounting; returns the report JSON.
nlohmann::json run_count_cost(const std::string& spec_ref, const BuildOptions& opt, Shape4 input);

}  // namespace gctnet
