#include "gctnet/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "gctnet/errors.hpp"

namespace gctnet {

GammaHistogram gamma_histogram(const std::vector<float>& gamma) {
    GammaHistogram h;
    h.counts.assign(GammaHistogram::kBins, 0);
    for (float g : gamma) {
        int bin = static_cast<int>(std::floor((g - GammaHistogram::kLo) / GammaHistogram::kStep));
        if (bin < 0) bin = 0;
        if (bin >= GammaHistogram::kBins) bin = GammaHistogram::kBins - 1;
        ++h.counts[static_cast<std::size_t>(bin)];
    }
    return h;
}

std::vector<AnalysisRecord> gamma_stats(Network<float>& net) {
    auto layers = net.gct_layers_named();
    if (layers.empty()) throw ConfigError("network has no transform layers to analyze");
    std::vector<AnalysisRecord> out;
    int idx = 0;
    for (auto& [full_name, l] : layers) {
        const std::vector<float>& g = l->params().gamma;
        double sum = 0.0;
        for (float v : g) sum += v;
        const double mean = sum / static_cast<double>(g.size());
        double varsum = 0.0;
        for (float v : g) {
            const double d = v - mean;
            varsum += d * d;
        }
        AnalysisRecord r;
        r.layer_index = idx++;
        r.layer_name = full_name;
        r.gamma_mean = mean;
        r.gamma_std = std::sqrt(varsum / static_cast<double>(g.size()));
        out.push_back(std::move(r));
    }
    return out;
}

void variance_ratio(Network<float>& net, const Tensor4f& batch,
                    std::vector<AnalysisRecord>& records) {
    std::vector<GctLayer<float>*> layers = net.gct_layers();
    if (layers.size() != records.size())
        throw ConfigError("analysis records do not match the network's transform layers");
    for (GctLayer<float>* l : layers) l->probe_enable(true);
    net.forward(batch, Mode::Eval);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        GctLayer<float>* l = layers[i];
        const std::vector<double> vin = l->probe_in_variance();
        const std::vector<double> vout = l->probe_out_variance();
        const std::int64_t per_channel = l->probe_count();
        AnalysisRecord& r = records[i];
        if (per_channel == 0) {
            r.ratio_defined = false;
            l->probe_enable(false);
            continue;
        }
        // Global variance over all N*C*H*W elements from the per-channel
        // moments: every channel has the same element count, so
        //   global var = mean_c(var_c) + var_c(mean_c).
        const std::size_t c = vin.size();
        const std::vector<double> min = l->probe_in_mean();
        const std::vector<double> mout = l->probe_out_mean();
        double gm_in = 0, gm_out = 0;
        for (std::size_t k = 0; k < c; ++k) {
            gm_in += min[k];
            gm_out += mout[k];
        }
        gm_in /= static_cast<double>(c);
        gm_out /= static_cast<double>(c);
        double gv_in = 0, gv_out = 0;
        for (std::size_t k = 0; k < c; ++k) {
            gv_in += vin[k] + (min[k] - gm_in) * (min[k] - gm_in);
            gv_out += vout[k] + (mout[k] - gm_out) * (mout[k] - gm_out);
        }
        gv_in /= static_cast<double>(c);
        gv_out /= static_cast<double>(c);

        if (gv_in > 0.0) {
            r.variance_ratio_global = gv_out / gv_in;
            // Per-channel ratios averaged over channels with defined input
            // variance.
            double acc = 0.0;
            int defined = 0;
            for (std::size_t k = 0; k < c; ++k) {
                if (vin[k] > 0.0) {
                    acc += vout[k] / vin[k];
                    ++defined;
                }
            }
            r.variance_ratio_perchannel_mean = defined > 0 ? acc / defined : r.variance_ratio_global;
            r.ratio_defined = true;
        } else {
            r.ratio_defined = false;
        }
        l->probe_enable(false);
    }
}

void write_analysis_csv(const std::string& path, const std::vector<AnalysisRecord>& records) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "layer_index,layer_name,gamma_mean,gamma_std,variance_ratio_global,"
         "variance_ratio_perchannel_mean\n";
    char buf[256];
    for (const AnalysisRecord& r : records) {
        if (r.ratio_defined) {
            std::snprintf(buf, sizeof(buf), "%d,%s,%.9g,%.9g,%.9g,%.9g\n", r.layer_index,
                          r.layer_name.c_str(), r.gamma_mean, r.gamma_std,
                          r.variance_ratio_global, r.variance_ratio_perchannel_mean);
        } else {
            std::snprintf(buf, sizeof(buf), "%d,%s,%.9g,%.9g,nan,nan\n", r.layer_index,
                          r.layer_name.c_str(), r.gamma_mean, r.gamma_std);
        }
        f << buf;
    }
}

void write_histogram_csv(const std::string& path, const std::vector<std::string>& layer_names,
                         const std::vector<GammaHistogram>& histograms) {
    if (layer_names.size() != histograms.size())
        throw ConfigError("histogram layer name count mismatch");
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "layer_name,bin_lo,bin_hi,count\n";
    char buf[160];
    for (std::size_t i = 0; i < histograms.size(); ++i) {
        for (int b = 0; b < GammaHistogram::kBins; ++b) {
            const double lo = GammaHistogram::kLo + b * GammaHistogram::kStep;
            std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%lld\n", layer_names[i].c_str(), lo,
                          lo + GammaHistogram::kStep,
                          static_cast<long long>(histograms[i].counts[static_cast<std::size_t>(b)]));
            f << buf;
        }
    }
}

namespace {

void cost_sequence(const std::vector<LayerSpec>& layers, const BuildOptions& opt, Shape4& cur,
                   const std::string& prefix, CostReport& rep);

void add_gct_cost(const std::string& host, Shape4 at, CostReport& rep) {
    LayerCost c;
    c.name = host + "_gct";
    c.kind = "gct";
    c.params = 3ll * at.c;
    c.macs = 2ll * at.c * at.h * at.w + 4ll * at.c;
    rep.layers.push_back(std::move(c));
}

void cost_sequence(const std::vector<LayerSpec>& layers, const BuildOptions& opt, Shape4& cur,
                   const std::string& prefix, CostReport& rep) {
    for (const LayerSpec& l : layers) {
        switch (l.type) {
            case LayerType::Conv: {
                if (opt.placement == Placement::BeforeConv) add_gct_cost(prefix + l.name, cur, rep);
                const Shape4 out = spec_output_shape(l, cur);
                LayerCost c;
                c.name = prefix + l.name;
                c.kind = "conv";
                c.params = static_cast<std::int64_t>(l.out) * cur.c * l.kernel * l.kernel +
                           (l.bias ? l.out : 0);
                c.macs = static_cast<std::int64_t>(l.out) * cur.c * l.kernel * l.kernel * out.h *
                         out.w;
                rep.layers.push_back(std::move(c));
                cur = out;
                break;
            }
            case LayerType::BatchNorm: {
                if (opt.placement == Placement::BeforeBn) add_gct_cost(prefix + l.name, cur, rep);
                LayerCost c;
                c.name = prefix + l.name;
                c.kind = "batch_norm";
                c.params = 2ll * cur.c;
                c.buffers = 2ll * cur.c;
                rep.layers.push_back(std::move(c));
                if (opt.placement == Placement::AfterBn) add_gct_cost(prefix + l.name, cur, rep);
                break;
            }
            case LayerType::Linear: {
                const std::int64_t in = static_cast<std::int64_t>(cur.c) * cur.h * cur.w;
                LayerCost c;
                c.name = prefix + l.name;
                c.kind = "linear";
                c.params = in * l.out + (l.bias ? l.out : 0);
                c.macs = in * l.out;
                rep.layers.push_back(std::move(c));
                cur = spec_output_shape(l, cur);
                break;
            }
            case LayerType::Residual: {
                Shape4 body_shape = cur;
                cost_sequence(l.body, opt, body_shape, prefix + l.name + ".body.", rep);
                if (l.se) {
                    const int hidden = se_hidden_width(body_shape.c);
                    LayerCost c;
                    c.name = prefix + l.name + ".body.se";
                    c.kind = "se";
                    c.params = 2ll * body_shape.c * hidden;
                    c.macs = 2ll * body_shape.c * hidden +
                             static_cast<std::int64_t>(body_shape.c) * body_shape.h * body_shape.w;
                    rep.layers.push_back(std::move(c));
                }
                Shape4 short_shape = cur;
                cost_sequence(l.shortcut, opt, short_shape, prefix + l.name + ".shortcut.", rep);
                cur = body_shape;
                break;
            }
            case LayerType::MaxPool:
            case LayerType::GlobalAvgPool:
                cur = spec_output_shape(l, cur);
                break;
            case LayerType::Relu:
                break;
        }
    }
}

}  // namespace

CostReport count_cost(const NetworkSpec& spec, const BuildOptions& opt, Shape4 input) {
    validate_spec(spec);
    if (input.c != spec.in_channels)
        throw ConfigError("input shape has " + std::to_string(input.c) +
                          " channels, spec expects " + std::to_string(spec.in_channels));
    CostReport rep;
    Shape4 cur{1, input.c, input.h, input.w};  // per-sample accounting
    cost_sequence(spec.layers, opt, cur, "", rep);
    for (const LayerCost& c : rep.layers) {
        rep.total_params += c.params;
        rep.total_buffers += c.buffers;
        rep.total_macs += c.macs;
    }
    return rep;
}

nlohmann::json cost_report_to_json(const CostReport& report) {
    nlohmann::json j;
    j["convention"] =
        "one multiply-add counted as one op; conv and linear exact; gct = 2*C*H*W + 4*C; "
        "se = 2*C*C/r + C*H*W; batch-norm, activations and pooling counted as zero; "
        "macs are per sample";
    j["total_params"] = report.total_params;
    j["total_buffers"] = report.total_buffers;
    j["total_params_with_buffers"] = report.params_with_buffers();
    j["total_macs"] = report.total_macs;
    j["total_params_millions"] = static_cast<double>(report.total_params) / 1e6;
    j["total_macs_giga"] = static_cast<double>(report.total_macs) / 1e9;
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerCost& c : report.layers) {
        layers.push_back({{"name", c.name},
                          {"kind", c.kind},
                          {"params", c.params},
                          {"buffers", c.buffers},
                          {"macs", c.macs}});
    }
    j["layers"] = std::move(layers);
    return j;
}

}  // namespace gctnet
