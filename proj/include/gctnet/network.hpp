#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gctnet/errors.hpp"
#include "gctnet/gct.hpp"
#include "gctnet/layers.hpp"

namespace gctnet {

enum class LayerType { Conv, BatchNorm, Relu, MaxPool, GlobalAvgPool, Linear, Residual };

// One node of a network description. Channel counts for batch-norm and
// input features for linear layers are inferred at build time.
struct LayerSpec {
    LayerType type{};
    std::string name;
    int out = 0;     // conv out channels / linear out features
    int kernel = 0;  // conv / max-pool
    int stride = 1;
    int pad = 0;
    bool bias = false;  // conv: default off, linear: default on (see parser)
    bool se = false;    // residual: append a squeeze-excitation gate to the body
    std::vector<LayerSpec> body;
    std::vector<LayerSpec> shortcut;
};

struct NetworkSpec {
    std::string name;
    int in_channels = 0;
    int in_h = 0;
    int in_w = 0;
    int classes = 0;
    std::vector<LayerSpec> layers;
};

// Where gated channel transforms are inserted relative to existing nodes.
enum class Placement { None, BeforeConv, BeforeBn, AfterBn };

std::string to_string(Placement p);
Placement placement_from_string(const std::string& s);

// Variant selectors shared by every inserted transform.
struct GctOptions {
    EmbedNorm embed_norm = EmbedNorm::L2;
    ChannelNorm channel_norm = ChannelNorm::L2;
    Adaptation adaptation = Adaptation::OnePlusTanh;
    NormEpsMode eps_mode = NormEpsMode::AddToSum;
    double epsilon = 1e-5;
};

struct BuildOptions {
    Placement placement = Placement::None;
    GctOptions gct;
};

// network_spec.cpp
NetworkSpec network_spec_from_json(const nlohmann::json& j);
nlohmann::json network_spec_to_json(const NetworkSpec& spec);
void validate_spec(const NetworkSpec& spec);
NetworkSpec preset_network(const std::string& name);
std::vector<std::string> preset_names();
nlohmann::json gct_options_to_json(const GctOptions& o);
GctOptions gct_options_from_json(const nlohmann::json& j);

// Squeeze-excitation hidden width: C/16 clamped so at least 4 units remain
// (desk-scale channel counts are small).
inline int se_hidden_width(int channels) {
    int h = channels / 16;
    if (h < 4) h = std::min(4, channels);
    return h;
}

// Output shape of one spec node given its input shape (batch dim carried
// through untouched).
inline Shape4 spec_output_shape(const LayerSpec& l, Shape4 in) {
    switch (l.type) {
        case LayerType::Conv:
            return Shape4{in.n, l.out, conv_out_dim(in.h, l.kernel, l.stride, l.pad),
                          conv_out_dim(in.w, l.kernel, l.stride, l.pad)};
        case LayerType::MaxPool:
            return Shape4{in.n, in.c, conv_out_dim(in.h, l.kernel, l.stride, l.pad),
                          conv_out_dim(in.w, l.kernel, l.stride, l.pad)};
        case LayerType::GlobalAvgPool:
            return Shape4{in.n, in.c, 1, 1};
        case LayerType::Linear:
            return Shape4{in.n, l.out, 1, 1};
        case LayerType::Residual: {
            Shape4 s = in;
            for (const auto& b : l.body) s = spec_output_shape(b, s);
            return s;
        }
        default:
            return in;
    }
}

// A sequential stack of layers (residual nodes nest their own branches).
template <typename T>
class Network {
  public:
    Network(std::vector<std::unique_ptr<Layer<T>>> layers, Shape4 input_shape, int classes)
        : layers_(std::move(layers)), input_shape_(input_shape), classes_(classes) {}

    void init(Rng& rng) {
        for (auto& l : layers_) l->init_params(rng);
    }

    Tensor4<T> forward(const Tensor4<T>& x, Mode mode) {
        Tensor4<T> cur = x;
        for (auto& l : layers_) cur = l->forward(cur, mode);
        return cur;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        Tensor4<T> cur = grad_out;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
        return cur;
    }

    void zero_grad() {
        for (auto& l : layers_) l->zero_grad();
    }

    std::vector<ParamSlot<T>> param_slots() {
        std::vector<ParamSlot<T>> out;
        for (auto& l : layers_) l->collect_params("", out);
        return out;
    }

    std::vector<StateSlot<T>> state_slots() {
        std::vector<StateSlot<T>> out;
        for (auto& l : layers_) l->collect_state("", out);
        return out;
    }

    void visit(const std::function<void(Layer<T>&)>& f) {
        for (auto& l : layers_) l->visit(f);
    }

    // Transform layers in traversal order.
    std::vector<GctLayer<T>*> gct_layers() {
        std::vector<GctLayer<T>*> out;
        visit([&out](Layer<T>& l) {
            if (auto* g = dynamic_cast<GctLayer<T>*>(&l)) out.push_back(g);
        });
        return out;
    }

    // Same layers with their globally unique hierarchical names.
    std::vector<std::pair<std::string, GctLayer<T>*>> gct_layers_named() {
        std::vector<std::pair<std::string, GctLayer<T>*>> out;
        for (auto& l : layers_) {
            l->visit_prefixed("", [&out](const std::string& prefix, Layer<T>& node) {
                if (auto* g = dynamic_cast<GctLayer<T>*>(&node))
                    out.emplace_back(prefix + g->name(), g);
            });
        }
        return out;
    }

    Shape4 output_shape(Shape4 in) const {
        for (const auto& l : layers_) in = l->output_shape(in);
        return in;
    }

    const Shape4& input_shape() const { return input_shape_; }
    int classes() const { return classes_; }
    std::size_t top_level_count() const { return layers_.size(); }

  private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    Shape4 input_shape_;
    int classes_;
};

namespace detail {

template <typename T>
std::unique_ptr<GctLayer<T>> make_gct(const std::string& host, int channels,
                                      const GctOptions& o) {
    return std::make_unique<GctLayer<T>>(host + "_gct", channels, o.embed_norm, o.channel_norm,
                                         o.adaptation, static_cast<T>(o.epsilon), o.eps_mode);
}

template <typename T>
void build_sequence(const std::vector<LayerSpec>& specs, const BuildOptions& opt, Shape4& cur,
                    std::vector<std::unique_ptr<Layer<T>>>& out) {
    for (const auto& l : specs) {
        switch (l.type) {
            case LayerType::Conv: {
                if (opt.placement == Placement::BeforeConv)
                    out.push_back(make_gct<T>(l.name, cur.c, opt.gct));
                out.push_back(std::make_unique<Conv2d<T>>(l.name, cur.c, l.out, l.kernel,
                                                          l.stride, l.pad, l.bias));
                cur = spec_output_shape(l, cur);
                break;
            }
            case LayerType::BatchNorm: {
                if (opt.placement == Placement::BeforeBn)
                    out.push_back(make_gct<T>(l.name, cur.c, opt.gct));
                out.push_back(std::make_unique<BatchNorm2d<T>>(l.name, cur.c));
                if (opt.placement == Placement::AfterBn)
                    out.push_back(make_gct<T>(l.name, cur.c, opt.gct));
                break;
            }
            case LayerType::Relu:
                out.push_back(std::make_unique<ReLU<T>>(l.name));
                break;
            case LayerType::MaxPool:
                out.push_back(std::make_unique<MaxPool2d<T>>(l.name, l.kernel, l.stride, l.pad));
                cur = spec_output_shape(l, cur);
                break;
            case LayerType::GlobalAvgPool:
                out.push_back(std::make_unique<GlobalAvgPool<T>>(l.name));
                cur = spec_output_shape(l, cur);
                break;
            case LayerType::Linear: {
                const std::int64_t feat = static_cast<std::int64_t>(cur.c) * cur.h * cur.w;
                out.push_back(std::make_unique<Linear<T>>(l.name, static_cast<int>(feat), l.out,
                                                          l.bias));
                cur = spec_output_shape(l, cur);
                break;
            }
            case LayerType::Residual: {
                Shape4 bshape = cur;
                std::vector<std::unique_ptr<Layer<T>>> body;
                build_sequence(l.body, opt, bshape, body);
                if (l.se) {
                    body.push_back(std::make_unique<SeBlock<T>>("se", bshape.c,
                                                                se_hidden_width(bshape.c)));
                }
                Shape4 sshape = cur;
                std::vector<std::unique_ptr<Layer<T>>> shortcut;
                build_sequence(l.shortcut, opt, sshape, shortcut);
                if (!(bshape == sshape))
                    throw ConfigError(l.name + ": residual body output " + bshape.str() +
                                      " does not match shortcut output " + sshape.str());
                out.push_back(std::make_unique<Residual<T>>(l.name, std::move(body),
                                                            std::move(shortcut)));
                cur = bshape;
                break;
            }
        }
    }
}

}  // namespace detail

template <typename T>
Network<T> build_network(const NetworkSpec& spec, const BuildOptions& opt = {}) {
    validate_spec(spec);
    Shape4 cur{1, spec.in_channels, spec.in_h, spec.in_w};
    std::vector<std::unique_ptr<Layer<T>>> layers;
    detail::build_sequence(spec.layers, opt, cur, layers);
    if (cur.c != spec.classes || cur.h != 1 || cur.w != 1)
        throw ConfigError(spec.name + ": network output " + cur.str() + " is not (N," +
                          std::to_string(spec.classes) + ",1,1)");
    return Network<T>(std::move(layers), Shape4{1, spec.in_channels, spec.in_h, spec.in_w},
                      spec.classes);
}

inline std::string to_string(Placement p) {
    switch (p) {
        case Placement::None: return "none";
        case Placement::BeforeConv: return "before_conv";
        case Placement::BeforeBn: return "before_bn";
        default: return "after_bn";
    }
}

inline Placement placement_from_string(const std::string& s) {
    if (s == "none") return Placement::None;
    if (s == "before_conv") return Placement::BeforeConv;
    if (s == "before_bn") return Placement::BeforeBn;
    if (s == "after_bn") return Placement::AfterBn;
    throw ConfigError("unknown placement '" + s + "' (expected before_conv|before_bn|after_bn|none)");
}

}  // namespace gctnet
