#include "gctnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "gctnet/errors.hpp"

namespace gctnet {

namespace {

constexpr char kMagic[8] = {'G', 'C', 'T', 'C', 'K', 'P', 'T', '1'};

bool is_gct_kind(ParamKind k) {
    return k == ParamKind::GctAlpha || k == ParamKind::GctGamma || k == ParamKind::GctBeta;
}

struct TensorEntry {
    std::string name;
    std::int64_t count = 0;
    std::int64_t offset = 0;  // element offset into the blob
};

nlohmann::json header_for(Network<float>& net, const NetworkSpec& spec,
                          const BuildOptions& build, const nlohmann::json& extra,
                          std::vector<TensorEntry>& entries) {
    nlohmann::json h;
    h["format"] = 1;
    h["spec"] = network_spec_to_json(spec);
    h["placement"] = to_string(build.placement);
    h["gct_options"] = gct_options_to_json(build.gct);
    h["extra"] = extra;

    nlohmann::json gct = nlohmann::json::object();
    for (auto& [name, layer] : net.gct_layers_named())
        gct[name] = gct_params_to_json(layer->params());
    h["gct_params"] = std::move(gct);

    std::int64_t offset = 0;
    nlohmann::json dir = nlohmann::json::array();
    for (const ParamSlot<float>& s : net.param_slots()) {
        if (is_gct_kind(s.kind)) continue;
        entries.push_back({s.name, s.count, offset});
        dir.push_back({{"name", s.name}, {"count", s.count}, {"offset", offset}});
        offset += s.count;
    }
    for (const StateSlot<float>& s : net.state_slots()) {
        entries.push_back({s.name, s.count, offset});
        dir.push_back({{"name", s.name}, {"count", s.count}, {"offset", offset}});
        offset += s.count;
    }
    h["tensors"] = std::move(dir);
    return h;
}

}  // namespace

void save_checkpoint(const std::string& path, Network<float>& net, const NetworkSpec& spec,
                     const BuildOptions& build, const nlohmann::json& extra) {
    std::vector<TensorEntry> entries;
    const nlohmann::json header = header_for(net, spec, build, extra, entries);
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint " + path);
    f.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = header_str.size();
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(lenb), 8);
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    // Blob in directory order. Host is little-endian; floats are written raw.
    std::map<std::string, const float*> sources;
    for (const ParamSlot<float>& s : net.param_slots())
        if (!is_gct_kind(s.kind)) sources[s.name] = s.data;
    for (const StateSlot<float>& s : net.state_slots()) sources[s.name] = s.data;
    for (const TensorEntry& e : entries) {
        auto it = sources.find(e.name);
        if (it == sources.end()) throw DataError("internal: tensor source missing " + e.name);
        f.write(reinterpret_cast<const char*>(it->second),
                static_cast<std::streamsize>(e.count) * static_cast<std::streamsize>(sizeof(float)));
    }
    if (!f) throw DataError("write failed for checkpoint " + path);
}

namespace {

struct RawCheckpoint {
    nlohmann::json header;
    std::vector<float> blob;
};

RawCheckpoint read_raw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError(path + ": not a checkpoint file (bad magic)");
    unsigned char lenb[8];
    f.read(reinterpret_cast<char*>(lenb), 8);
    if (!f) throw DataError(path + ": truncated checkpoint header");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
    if (len > (1ull << 31)) throw DataError(path + ": implausible header length");
    std::string header_str(len, '\0');
    f.read(header_str.data(), static_cast<std::streamsize>(len));
    if (!f) throw DataError(path + ": truncated checkpoint header");
    RawCheckpoint raw;
    try {
        raw.header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": corrupt checkpoint header: " + e.what());
    }
    // Rest of the file is the blob.
    std::vector<char> rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(float) != 0) throw DataError(path + ": blob size not float-aligned");
    raw.blob.resize(rest.size() / sizeof(float));
    if (!rest.empty()) std::memcpy(raw.blob.data(), rest.data(), rest.size());
    return raw;
}

CheckpointMeta meta_from_header(const nlohmann::json& h) {
    CheckpointMeta meta;
    try {
        meta.spec = network_spec_from_json(h.at("spec"));
        meta.build.placement = placement_from_string(h.at("placement").get<std::string>());
        meta.build.gct = gct_options_from_json(h.at("gct_options"));
        meta.extra = h.value("extra", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt checkpoint header: ") + e.what());
    }
    return meta;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    return meta_from_header(read_raw(path).header);
}

Network<float> load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
    RawCheckpoint raw = read_raw(path);
    CheckpointMeta meta = meta_from_header(raw.header);
    Network<float> net = build_network<float>(meta.spec, meta.build);

    std::map<std::string, TensorEntry> dir;
    for (const auto& t : raw.header.at("tensors")) {
        TensorEntry e;
        e.name = t.at("name").get<std::string>();
        e.count = t.at("count").get<std::int64_t>();
        e.offset = t.at("offset").get<std::int64_t>();
        if (e.offset < 0 || e.count < 0 ||
            e.offset + e.count > static_cast<std::int64_t>(raw.blob.size()))
            throw DataError(path + ": tensor " + e.name + " lies outside the blob");
        dir[e.name] = e;
    }

    auto restore = [&](const std::string& name, float* data, std::int64_t count) {
        auto it = dir.find(name);
        if (it == dir.end()) throw DataError(path + ": checkpoint missing tensor " + name);
        if (it->second.count != count)
            throw DataError(path + ": tensor " + name + " has " +
                            std::to_string(it->second.count) + " values, expected " +
                            std::to_string(count));
        std::memcpy(data, raw.blob.data() + it->second.offset,
                    static_cast<std::size_t>(count) * sizeof(float));
    };
    for (const ParamSlot<float>& s : net.param_slots())
        if (!is_gct_kind(s.kind)) restore(s.name, s.data, s.count);
    for (const StateSlot<float>& s : net.state_slots()) restore(s.name, s.data, s.count);

    const nlohmann::json& gct = raw.header.at("gct_params");
    for (auto& [name, layer] : net.gct_layers_named()) {
        if (!gct.contains(name))
            throw DataError(path + ": checkpoint missing transform params for " + name);
        GctParams<float> p;
        try {
            p = gct_params_from_json<float>(gct.at(name));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ": corrupt transform params for " + name + ": " + e.what());
        }
        if (p.channels() != layer->params().channels())
            throw DataError(path + ": transform " + name + " channel count mismatch");
        layer->params() = std::move(p);
    }

    if (meta_out) *meta_out = std::move(meta);
    return net;
}

}  // namespace gctnet
