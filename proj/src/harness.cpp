#include "gctnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "gctnet/analysis.hpp"
#include "gctnet/checkpoint.hpp"
#include "gctnet/errors.hpp"
#include "gctnet/gradcheck.hpp"

namespace gctnet {

namespace {

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    DatasetConfig d;
    d.kind = j.at("kind").get<std::string>();
    if (d.kind != "mnist" && d.kind != "cifar10")
        throw ConfigError("dataset kind must be mnist or cifar10, got '" + d.kind + "'");
    d.train = j.at("train").get<std::vector<std::string>>();
    d.test = j.at("test").get<std::vector<std::string>>();
    if (d.kind == "mnist" && (d.train.size() != 2 || d.test.size() != 2))
        throw ConfigError("mnist dataset needs [images, labels] path pairs");
    if (d.train.empty() || d.test.empty()) throw ConfigError("dataset paths missing");
    d.train_limit = j.value("train_limit", 0);
    d.val_limit = j.value("val_limit", 0);
    if (d.train_limit < 0 || d.val_limit < 0) throw ConfigError("dataset limits must be >= 0");
    if (j.contains("augment")) d.augment = augment_from_string(j.at("augment").get<std::string>());
    return d;
}

nlohmann::json dataset_config_to_json(const DatasetConfig& d) {
    return nlohmann::json{{"kind", d.kind},         {"train", d.train},
                          {"test", d.test},         {"train_limit", d.train_limit},
                          {"val_limit", d.val_limit}, {"augment", to_string(d.augment)}};
}

Dataset load_split(const DatasetConfig& d, bool test_split) {
    const std::vector<std::string>& paths = test_split ? d.test : d.train;
    if (d.kind == "mnist") return load_mnist(paths[0], paths[1]);
    return load_cifar10(paths);
}

Dataset load_limited(const DatasetConfig& d, bool test_split) {
    Dataset ds = load_split(d, test_split);
    const int limit = test_split ? d.val_limit : d.train_limit;
    if (limit > 0 && limit < ds.size()) ds = take(ds, 0, limit);
    return ds;
}

// Sequential batch copy for evaluation passes.
void fill_batch(const Dataset& ds, int start, int count, Tensor4f& images,
                std::vector<int>& labels) {
    images = Tensor4f(count, ds.images.c(), ds.images.h(), ds.images.w());
    labels.assign(ds.labels.begin() + start, ds.labels.begin() + start + count);
    const std::int64_t per =
        static_cast<std::int64_t>(ds.images.c()) * ds.images.h() * ds.images.w();
    std::memcpy(images.data(), ds.images.data() + static_cast<std::int64_t>(start) * per,
                static_cast<std::size_t>(count * per) * sizeof(float));
}

EvalResult eval_pass(Network<float>& net, const Dataset& ds, int batch_size) {
    EvalResult r;
    r.count = ds.size();
    SoftmaxXent<float> loss_fn;
    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < ds.size(); start += batch_size) {
        const int count = std::min(batch_size, ds.size() - start);
        Tensor4f images;
        std::vector<int> labels;
        fill_batch(ds, start, count, images, labels);
        Tensor4f logits = net.forward(images, Mode::Eval);
        loss_sum += static_cast<double>(loss_fn.forward(logits, labels)) * count;
        correct += count_correct(logits, labels);
    }
    r.loss = loss_sum / r.count;
    r.acc = static_cast<double>(correct) / r.count;
    return r;
}

nlohmann::json channel_stats_to_json(const ChannelStats& st) {
    return nlohmann::json{{"mean", st.mean}, {"stddev", st.stddev}};
}

ChannelStats channel_stats_from_json(const nlohmann::json& j) {
    ChannelStats st;
    st.mean = j.at("mean").get<std::vector<float>>();
    st.stddev = j.at("stddev").get<std::vector<float>>();
    return st;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    try {
        c.network = j.value("network", std::string("smallcnn"));
        if (!j.contains("dataset")) throw ConfigError("run config missing 'dataset'");
        c.data = dataset_config_from_json(j.at("dataset"));
        if (j.contains("placement"))
            c.placement = placement_from_string(j.at("placement").get<std::string>());
        if (j.contains("gct")) c.gct = gct_options_from_json(j.at("gct"));
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("seed")) c.train.seed = j.at("seed").get<std::uint64_t>();
        c.out_dir = j.value("out_dir", std::string("run_out"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["network"] = c.network;
    j["dataset"] = dataset_config_to_json(c.data);
    j["placement"] = to_string(c.placement);
    j["gct"] = gct_options_to_json(c.gct);
    j["train"] = train_config_to_json(c.train);
    j["out_dir"] = c.out_dir;
    return j;
}

NetworkSpec resolve_network_spec(const std::string& ref) {
    for (const std::string& p : preset_names())
        if (p == ref) return preset_network(ref);
    std::ifstream f(ref);
    if (!f) throw ConfigError("network '" + ref + "' is neither a preset nor a readable file");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(ref + ": invalid JSON: " + e.what());
    }
    return network_spec_from_json(j);
}

TrainResult run_train(const RunConfig& cfg) {
    // Everything that can be validated without touching data comes first.
    cfg.train.validate();
    const NetworkSpec spec = resolve_network_spec(cfg.network);
    BuildOptions build;
    build.placement = cfg.placement;
    build.gct = cfg.gct;
    Network<float> net = build_network<float>(spec, build);

    Dataset train_ds = load_limited(cfg.data, false);
    Dataset val_ds = load_limited(cfg.data, true);
    if (train_ds.images.c() != spec.in_channels || train_ds.images.h() != spec.in_h ||
        train_ds.images.w() != spec.in_w)
        throw ConfigError("dataset shape does not match network input " +
                          Shape4{1, spec.in_channels, spec.in_h, spec.in_w}.str());

    const ChannelStats stats = compute_channel_stats(train_ds);
    standardize(train_ds, stats);
    standardize(val_ds, stats);

    Rng init_rng(cfg.train.seed);
    net.init(init_rng);
    SgdOptimizer<float> opt(net.param_slots(), cfg.train);

    std::filesystem::create_directories(cfg.out_dir);
    const std::string metrics_path = cfg.out_dir + "/metrics.csv";
    const std::string timing_path = cfg.out_dir + "/timing.csv";
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw DataError("cannot write " + metrics_path);
    std::ofstream timing(timing_path, std::ios::trunc);
    if (!timing) throw DataError("cannot write " + timing_path);
    metrics << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
    metrics.flush();
    timing << "epoch,wall_seconds\n";
    timing.flush();

    BatchStream stream(train_ds, cfg.train.batch_size, Rng::mix(cfg.train.seed, 0x0badcafe),
                       cfg.data.augment);
    SoftmaxXent<float> loss_fn;
    TrainResult result;
    result.metrics_path = metrics_path;

    char row[256];
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg.train);
        stream.start_epoch(epoch);
        double loss_sum = 0.0;
        int seen = 0, correct = 0;
        Tensor4f images;
        std::vector<int> labels;
        while (stream.next(images, labels)) {
            net.zero_grad();
            Tensor4f logits = net.forward(images, Mode::Train);
            const float loss = loss_fn.forward(logits, labels);
            if (!std::isfinite(loss))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
            net.backward(loss_fn.backward());
            opt.step(lr);
            const int count = images.n();
            loss_sum += static_cast<double>(loss) * count;
            correct += count_correct(logits, labels);
            seen += count;
        }
        const EvalResult val = eval_pass(net, val_ds, cfg.train.batch_size);
        if (!std::isfinite(val.loss))
            throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = loss_sum / seen;
        m.train_acc = static_cast<double>(correct) / seen;
        m.val_loss = val.loss;
        m.val_acc = val.acc;
        result.metrics.push_back(m);

        std::snprintf(row, sizeof(row), "%d,%.10g,%.8f,%.8f,%.8f,%.8f\n", m.epoch, m.lr,
                      m.train_loss, m.train_acc, m.val_loss, m.val_acc);
        metrics << row;
        metrics.flush();
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::snprintf(row, sizeof(row), "%d,%.3f\n", epoch, secs);
        timing << row;
        timing.flush();
    }

    nlohmann::json extra;
    extra["channel_stats"] = channel_stats_to_json(stats);
    extra["run_config"] = run_config_to_json(cfg);
    result.checkpoint_path = cfg.out_dir + "/checkpoint.bin";
    save_checkpoint(result.checkpoint_path, net, spec, build, extra);
    return result;
}

EvalResult run_eval(const std::string& checkpoint_path, const RunConfig& cfg) {
    CheckpointMeta meta;
    Network<float> net = load_checkpoint(checkpoint_path, &meta);
    Dataset ds = load_limited(cfg.data, true);
    if (meta.extra.contains("channel_stats")) {
        standardize(ds, channel_stats_from_json(meta.extra.at("channel_stats")));
    } else {
        Dataset train_ds = load_limited(cfg.data, false);
        standardize(ds, compute_channel_stats(train_ds));
    }
    return eval_pass(net, ds, cfg.train.batch_size);
}

int run_gradcheck(std::uint64_t seed, int instances, std::ostream& out) {
    const GradcheckReport report = gradcheck_suite(seed, instances);
    int unexpected = 0;
    char line[160];
    for (const GradcheckCase& c : report.cases) {
        const bool healthy = c.expected_fail ? !c.pass : c.pass;
        if (!healthy) ++unexpected;
        std::snprintf(line, sizeof(line), "%-34s max_rel_err=%.3e  %s%s\n", c.name.c_str(),
                      c.max_rel_err,
                      c.pass ? "pass" : "FAIL",
                      c.expected_fail ? (c.pass ? " (control NOT caught)" : " (expected: control)")
                                      : "");
        out << line;
    }
    out << (unexpected == 0 ? "gradcheck ok" : "gradcheck FAILED") << " (tolerance "
        << report.tolerance << ", " << instances << " instances per case)\n";
    return unexpected;
}

void run_analyze(const std::string& checkpoint_path, const RunConfig& cfg, int batch_size,
                 std::ostream& out) {
    CheckpointMeta meta;
    Network<float> net = load_checkpoint(checkpoint_path, &meta);
    Dataset ds = load_limited(cfg.data, true);
    if (meta.extra.contains("channel_stats"))
        standardize(ds, channel_stats_from_json(meta.extra.at("channel_stats")));
    else
        standardize(ds, compute_channel_stats(ds));

    const int count = std::min(batch_size, ds.size());
    Tensor4f batch;
    std::vector<int> labels;
    fill_batch(ds, 0, count, batch, labels);

    std::vector<AnalysisRecord> records = gamma_stats(net);
    variance_ratio(net, batch, records);

    std::filesystem::create_directories(cfg.out_dir);
    const std::string analysis_path = cfg.out_dir + "/analysis.csv";
    write_analysis_csv(analysis_path, records);
    std::vector<std::string> names;
    std::vector<GammaHistogram> hists;
    for (auto& [name, layer] : net.gct_layers_named()) {
        names.push_back(name);
        hists.push_back(gamma_histogram(layer->params().gamma));
    }
    const std::string hist_path = cfg.out_dir + "/gamma_histogram.csv";
    write_histogram_csv(hist_path, names, hists);
    out << "wrote " << analysis_path << " (" << records.size() << " layers) and " << hist_path
        << "\n";
}

std::string run_ablate(const RunConfig& cfg, const std::string& axis, std::ostream& out) {
    struct Variant {
        std::string label;
        RunConfig cfg;
    };
    std::vector<Variant> variants;
    RunConfig base = cfg;
    if (base.placement == Placement::None && axis != "position")
        base.placement = Placement::BeforeConv;

    if (axis == "embedding") {
        for (EmbedNorm e : {EmbedNorm::Linf, EmbedNorm::L1, EmbedNorm::L2}) {
            RunConfig v = base;
            v.gct.embed_norm = e;
            variants.push_back({to_string(e), std::move(v)});
        }
    } else if (axis == "normalization") {
        for (ChannelNorm c : {ChannelNorm::L1, ChannelNorm::L2, ChannelNorm::MeanVar}) {
            RunConfig v = base;
            v.gct.channel_norm = c;
            variants.push_back({to_string(c), std::move(v)});
        }
    } else if (axis == "adaptation") {
        for (Adaptation a :
             {Adaptation::OnePlusTanh, Adaptation::Sigmoid, Adaptation::OnePlusElu}) {
            RunConfig v = base;
            v.gct.adaptation = a;
            variants.push_back({to_string(a), std::move(v)});
        }
    } else if (axis == "position") {
        for (Placement p : {Placement::AfterBn, Placement::BeforeBn, Placement::BeforeConv}) {
            RunConfig v = base;
            v.placement = p;
            variants.push_back({to_string(p), std::move(v)});
        }
    } else {
        throw ConfigError("unknown ablation axis '" + axis +
                          "' (expected embedding|normalization|adaptation|position)");
    }

    struct Row {
        std::string label;
        EpochMetrics last;
    };
    std::vector<Row> rows;
    for (Variant& v : variants) {
        v.cfg.out_dir = cfg.out_dir + "/ablate_" + axis + "/" + v.label;
        out << "ablate " << axis << ": training variant " << v.label << "\n";
        const TrainResult r = run_train(v.cfg);
        Row row;
        row.label = v.label;
        if (!r.metrics.empty()) row.last = r.metrics.back();
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.last.val_acc > b.last.val_acc; });

    std::filesystem::create_directories(cfg.out_dir);
    const std::string csv_path = cfg.out_dir + "/ablate_" + axis + ".csv";
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw DataError("cannot write " + csv_path);
    f << "rank,variant,val_acc,val_loss,train_loss,epochs,seed\n";
    char row[256];
    int rank = 1;
    for (const Row& r : rows) {
        std::snprintf(row, sizeof(row), "%d,%s,%.8f,%.8f,%.8f,%d,%llu\n", rank++,
                      r.label.c_str(), r.last.val_acc, r.last.val_loss, r.last.train_loss,
                      cfg.train.epochs, static_cast<unsigned long long>(cfg.train.seed));
        f << row;
    }
    out << "wrote " << csv_path << "\n";
    return csv_path;
}

nlohmann::json run_count_cost(const std::string& spec_ref, const BuildOptions& opt,
                              Shape4 input) {
    const NetworkSpec spec = resolve_network_spec(spec_ref);
    const CostReport report = count_cost(spec, opt, input);
    nlohmann::json j = cost_report_to_json(report);
    j["network"] = spec.name;
    j["placement"] = to_string(opt.placement);
    j["input_shape"] = {input.n, input.c, input.h, input.w};
    return j;
}

}  // namespace gctnet
