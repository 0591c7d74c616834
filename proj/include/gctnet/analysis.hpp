#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gctnet/network.hpp"
#include "gctnet/tensor.hpp"

namespace gctnet {

// Fixed gamma histogram over [-1, 1] in 0.05 steps; out-of-range values
// land in the edge bins so counts always sum to the channel count.
struct GammaHistogram {
    static constexpr double kLo = -1.0;
    static constexpr double kHi = 1.0;
    static constexpr double kStep = 0.05;
    static constexpr int kBins = 40;
    std::vector<std::int64_t> counts;  // kBins entries
};

GammaHistogram gamma_histogram(const std::vector<float>& gamma);

struct AnalysisRecord {
    int layer_index = 0;
    std::string layer_name;
    double gamma_mean = 0.0;
    double gamma_std = 0.0;  // population
    double variance_ratio_global = 0.0;
    double variance_ratio_perchannel_mean = 0.0;
    bool ratio_defined = false;
};

// Gamma statistics for every transform layer, in traversal order. Throws
// ConfigError when the network has none.
std::vector<AnalysisRecord> gamma_stats(Network<float>& net);

// Runs one eval-mode pass over the batch with probes enabled and fills the
// variance-ratio fields of the given records (which must come from
// gamma_stats on the same network). Zero input variance leaves a record
// flagged undefined rather than inventing a number.
void variance_ratio(Network<float>& net, const Tensor4f& batch,
                    std::vector<AnalysisRecord>& records);

// CSV with one row per transform layer; undefined ratios serialize as nan.
void write_analysis_csv(const std::string& path, const std::vector<AnalysisRecord>& records);

// Companion CSV: one row per (layer, bin).
void write_histogram_csv(const std::string& path, const std::vector<std::string>& layer_names,
                         const std::vector<GammaHistogram>& histograms);

struct LayerCost {
    std::string name;
    std::string kind;
    std::int64_t params = 0;
    std::int64_t buffers = 0;  // batch-norm running statistics
    std::int64_t macs = 0;     // multiply-adds per sample
};

struct CostReport {
    std::vector<LayerCost> layers;
    std::int64_t total_params = 0;
    std::int64_t total_buffers = 0;
    std::int64_t total_macs = 0;

    std::int64_t params_with_buffers() const { return total_params + total_buffers; }
};

// Symbolic walk over the spec with the given insertion policy; nothing is
// allocated. Conventions: one multiply-add = one op; conv/linear counted
// exactly; the channel gates use fixed closed-form estimates; batch-norm,
// activations and pooling count as zero.
CostReport count_cost(const NetworkSpec& spec, const BuildOptions& opt, Shape4 input);

nlohmann::json cost_report_to_json(const CostReport& report);

}  // namespace gctnet
