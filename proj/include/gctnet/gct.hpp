#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gctnet/errors.hpp"
#include "gctnet/tensor.hpp"

namespace gctnet {

// Spatial norm used by the global context embedding.
enum class EmbedNorm { L1, L2, Linf };

// Cross-channel normalization applied to the embedding vector.
enum class ChannelNorm { L1, L2, MeanVar };

// Gate activation shape.
enum class Adaptation { OnePlusTanh, Sigmoid, OnePlusElu };

// Where the small constant enters the cross-channel norm: added to the sum
// of squares (the normative form) or to their mean (the common reference
// formulation; differs by O(epsilon)). Only meaningful for the Lp norms.
enum class NormEpsMode { AddToSum, AddToMean };

std::string to_string(EmbedNorm v);
std::string to_string(ChannelNorm v);
std::string to_string(Adaptation v);
std::string to_string(NormEpsMode v);
EmbedNorm embed_norm_from_string(const std::string& s);
ChannelNorm channel_norm_from_string(const std::string& s);
Adaptation adaptation_from_string(const std::string& s);
NormEpsMode norm_eps_mode_from_string(const std::string& s);

// Per-layer trainable state and variant selectors of a gated channel
// transform. Fresh parameters (alpha=1, gamma=0, beta=0) make the layer an
// exact identity under the OnePlusTanh gate.
template <typename T>
struct GctParams {
    std::vector<T> alpha;
    std::vector<T> gamma;
    std::vector<T> beta;
    T epsilon = T(1e-5);
    EmbedNorm embed_norm = EmbedNorm::L2;
    ChannelNorm channel_norm = ChannelNorm::L2;
    Adaptation adaptation = Adaptation::OnePlusTanh;
    NormEpsMode eps_mode = NormEpsMode::AddToSum;

    static GctParams fresh(int channels) {
        GctParams p;
        p.alpha.assign(static_cast<std::size_t>(channels), T(1));
        p.gamma.assign(static_cast<std::size_t>(channels), T(0));
        p.beta.assign(static_cast<std::size_t>(channels), T(0));
        return p;
    }

    int channels() const { return static_cast<int>(alpha.size()); }

    void validate() const {
        if (alpha.size() != gamma.size() || alpha.size() != beta.size()) {
            throw ShapeError("GctParams: alpha/gamma/beta lengths differ");
        }
        if (alpha.empty()) throw ShapeError("GctParams: zero channels");
        // epsilon == 0 is legal for the core math (the backward pass guards the
        // vanishing-denominator corners); configs keep a positive default.
        if (!(epsilon >= T(0))) throw ShapeError("GctParams: epsilon must be >= 0");
    }

    bool variant_equal(const GctParams& o) const {
        return channels() == o.channels() && embed_norm == o.embed_norm &&
               channel_norm == o.channel_norm && adaptation == o.adaptation &&
               eps_mode == o.eps_mode && epsilon == o.epsilon;
    }
};

// Values retained by the forward pass for the exact backward pass.
template <typename T>
struct GctCache {
    Tensor4<T> input;     // retained copy of x
    Mat<T> embed_raw;     // r: spatial norm before the alpha scale
    Mat<T> s;             // alpha * r
    Mat<T> s_hat;         // normalized embedding
    Mat<T> gate;          // per-(n,c) gate activation
    std::vector<T> denom; // per-sample channel-norm denominator
    std::vector<T> mu;    // per-sample mean (MeanVar only)
    std::vector<T> sigma; // per-sample population std (MeanVar only)
    // Variant fingerprint for cache/params mismatch detection.
    int channels = 0;
    EmbedNorm embed_norm{};
    ChannelNorm channel_norm{};
    Adaptation adaptation{};
    NormEpsMode eps_mode{};
    T epsilon{};
};

namespace detail {

// Sum of f(values) accumulated in ascending value order. The canonical
// order makes cross-channel reductions invariant under channel
// permutation, bit for bit.
template <typename T>
T sorted_sum(std::vector<T>& scratch) {
    std::sort(scratch.begin(), scratch.end());
    T acc = T(0);
    for (const T& x : scratch) acc += x;
    return acc;
}

template <typename T>
T sign_of(T x) {
    if (x > T(0)) return T(1);
    if (x < T(0)) return T(-1);
    return T(0);
}

}  // namespace detail

// Global context embedding: per (n,c), the spatial Lp norm of the channel
// plane (with the epsilon floor inside the norm) scaled by alpha_c.
// Returns s as an (N,C) matrix.
template <typename T>
Mat<T> embed(const Tensor4<T>& x, const GctParams<T>& params) {
    params.validate();
    if (x.c() != params.channels()) {
        throw ShapeError("embed: tensor has " + std::to_string(x.c()) +
                         " channels, params have " + std::to_string(params.channels()));
    }
    Mat<T> s(x.n(), x.c());
    SpatialReduce kind;
    switch (params.embed_norm) {
        case EmbedNorm::L2: kind = SpatialReduce::SumSquares; break;
        case EmbedNorm::L1: kind = SpatialReduce::SumAbs; break;
        default: kind = SpatialReduce::MaxAbs; break;
    }
    Tensor4<T> red = reduce_spatial(x, kind);
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            T r = red.at(n, c, 0, 0) + params.epsilon;
            if (params.embed_norm == EmbedNorm::L2) r = std::sqrt(r);
            s.at(n, c) = params.alpha[static_cast<std::size_t>(c)] * r;
        }
    }
    return s;
}

namespace detail {

// Shared by the public channel_normalize and the cached forward. Fills
// s_hat plus the per-sample reduction values the backward pass needs.
template <typename T>
void channel_normalize_impl(const Mat<T>& s, const GctParams<T>& params, Mat<T>& s_hat,
                            std::vector<T>& denom, std::vector<T>& mu,
                            std::vector<T>& sigma) {
    const int n_rows = s.rows;
    const int c = s.cols;
    const T cf = static_cast<T>(c);
    s_hat = Mat<T>(n_rows, c);
    denom.assign(static_cast<std::size_t>(n_rows), T(0));
    mu.assign(static_cast<std::size_t>(n_rows), T(0));
    sigma.assign(static_cast<std::size_t>(n_rows), T(0));
    std::vector<T> scratch(static_cast<std::size_t>(c));

    for (int n = 0; n < n_rows; ++n) {
        const T* row = &s.v[static_cast<std::size_t>(n) * c];
        switch (params.channel_norm) {
            case ChannelNorm::L2: {
                for (int k = 0; k < c; ++k) scratch[static_cast<std::size_t>(k)] = row[k] * row[k];
                const T ss = sorted_sum(scratch);
                T t;
                T scale;
                if (params.eps_mode == NormEpsMode::AddToSum) {
                    t = std::sqrt(ss + params.epsilon);
                    scale = std::sqrt(cf);
                } else {
                    t = std::sqrt(ss / cf + params.epsilon);
                    scale = T(1);
                }
                denom[static_cast<std::size_t>(n)] = t;
                for (int k = 0; k < c; ++k) s_hat.at(n, k) = scale * row[k] / t;
                break;
            }
            case ChannelNorm::L1: {
                for (int k = 0; k < c; ++k) scratch[static_cast<std::size_t>(k)] = std::abs(row[k]);
                const T sa = sorted_sum(scratch);
                T t;
                T scale;
                if (params.eps_mode == NormEpsMode::AddToSum) {
                    t = sa + params.epsilon;
                    scale = cf;
                } else {
                    t = sa / cf + params.epsilon;
                    scale = T(1);
                }
                denom[static_cast<std::size_t>(n)] = t;
                for (int k = 0; k < c; ++k) s_hat.at(n, k) = scale * row[k] / t;
                break;
            }
            case ChannelNorm::MeanVar: {
                for (int k = 0; k < c; ++k) scratch[static_cast<std::size_t>(k)] = row[k];
                const T m = sorted_sum(scratch) / cf;
                for (int k = 0; k < c; ++k) {
                    const T d = row[k] - m;
                    scratch[static_cast<std::size_t>(k)] = d * d;
                }
                const T var = sorted_sum(scratch) / cf;
                const T sd = std::sqrt(var);
                const T t = sd + params.epsilon;
                mu[static_cast<std::size_t>(n)] = m;
                sigma[static_cast<std::size_t>(n)] = sd;
                denom[static_cast<std::size_t>(n)] = t;
                for (int k = 0; k < c; ++k) s_hat.at(n, k) = (row[k] - m) / t;
                break;
            }
        }
    }
}

template <typename T>
T gate_value(T z, Adaptation a) {
    switch (a) {
        case Adaptation::OnePlusTanh: return T(1) + std::tanh(z);
        case Adaptation::Sigmoid: return T(1) / (T(1) + std::exp(-z));
        default: // OnePlusElu, unit scale
            return z >= T(0) ? T(1) + z : std::exp(z);
    }
}

// Gate derivative dh/dz recovered from the gate value (all three
// activations are invertible enough for this).
template <typename T>
T gate_derivative(T gate, Adaptation a) {
    switch (a) {
        case Adaptation::OnePlusTanh: {
            const T th = gate - T(1);
            return T(1) - th * th;
        }
        case Adaptation::Sigmoid: return gate * (T(1) - gate);
        default: return gate < T(1) ? gate : T(1);
    }
}

}  // namespace detail

// Cross-channel normalization of the embedding vector, per sample.
template <typename T>
Mat<T> channel_normalize(const Mat<T>& s, const GctParams<T>& params) {
    Mat<T> s_hat;
    std::vector<T> denom, mu, sigma;
    detail::channel_normalize_impl(s, params, s_hat, denom, mu, sigma);
    return s_hat;
}

// Rescale each channel of x by its gate activation.
template <typename T>
Tensor4<T> gate_adapt(const Tensor4<T>& x, const Mat<T>& s_hat, const GctParams<T>& params) {
    if (s_hat.rows != x.n() || s_hat.cols != x.c()) {
        throw ShapeError("gate_adapt: s_hat shape does not match tensor");
    }
    Tensor4<T> y(x.shape());
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T z = params.gamma[static_cast<std::size_t>(c)] * s_hat.at(n, c) +
                        params.beta[static_cast<std::size_t>(c)];
            const T g = detail::gate_value(z, params.adaptation);
            const T* src = x.plane(n, c);
            T* dst = y.plane(n, c);
            for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * g;
        }
    }
    return y;
}

// Full transform: embedding, channel normalization, gating. Returns the
// adapted tensor and the cache the backward pass consumes.
template <typename T>
std::pair<Tensor4<T>, GctCache<T>> gct_forward(const Tensor4<T>& x, const GctParams<T>& params) {
    GctCache<T> cache;
    cache.embed_raw = Mat<T>(x.n(), x.c());
    cache.s = embed(x, params);
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T a = params.alpha[static_cast<std::size_t>(c)];
            // r is recovered from s where alpha is nonzero; recomputed below otherwise.
            cache.embed_raw.at(n, c) = a != T(0) ? cache.s.at(n, c) / a : T(0);
        }
    }
    // Channels with alpha == 0 still need r for grad_alpha.
    bool any_zero_alpha = false;
    for (const T a : params.alpha) any_zero_alpha |= (a == T(0));
    if (any_zero_alpha) {
        GctParams<T> unit = params;
        std::fill(unit.alpha.begin(), unit.alpha.end(), T(1));
        Mat<T> r = embed(x, unit);
        for (int n = 0; n < x.n(); ++n)
            for (int c = 0; c < x.c(); ++c)
                if (params.alpha[static_cast<std::size_t>(c)] == T(0))
                    cache.embed_raw.at(n, c) = r.at(n, c);
    }

    detail::channel_normalize_impl(cache.s, params, cache.s_hat, cache.denom, cache.mu,
                                   cache.sigma);

    cache.gate = Mat<T>(x.n(), x.c());
    Tensor4<T> y(x.shape());
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T z = params.gamma[static_cast<std::size_t>(c)] * cache.s_hat.at(n, c) +
                        params.beta[static_cast<std::size_t>(c)];
            const T g = detail::gate_value(z, params.adaptation);
            cache.gate.at(n, c) = g;
            const T* src = x.plane(n, c);
            T* dst = y.plane(n, c);
            for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * g;
        }
    }

    cache.input = x;
    cache.channels = params.channels();
    cache.embed_norm = params.embed_norm;
    cache.channel_norm = params.channel_norm;
    cache.adaptation = params.adaptation;
    cache.eps_mode = params.eps_mode;
    cache.epsilon = params.epsilon;
    return {std::move(y), std::move(cache)};
}

template <typename T>
struct GctGrads {
    Tensor4<T> x;
    std::vector<T> alpha;
    std::vector<T> gamma;
    std::vector<T> beta;
};

// Exact analytic gradients through the full transform. Parameter gradients
// are summed over the batch. The epsilon terms are differentiated exactly.
template <typename T>
GctGrads<T> gct_backward(const GctCache<T>& cache, const Tensor4<T>& grad_out,
                         const GctParams<T>& params) {
    params.validate();
    if (cache.channels != params.channels() || cache.embed_norm != params.embed_norm ||
        cache.channel_norm != params.channel_norm || cache.adaptation != params.adaptation ||
        cache.eps_mode != params.eps_mode || cache.epsilon != params.epsilon) {
        throw ShapeError("gct_backward: cache was produced by different params");
    }
    const Tensor4<T>& x = cache.input;
    if (!(grad_out.shape() == x.shape())) {
        throw ShapeError("gct_backward: grad_out shape " + grad_out.shape().str() +
                         " does not match cached input " + x.shape().str());
    }

    const int nb = x.n();
    const int cch = x.c();
    const T cf = static_cast<T>(cch);
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();

    GctGrads<T> g;
    g.x = Tensor4<T>(x.shape());
    g.alpha.assign(static_cast<std::size_t>(cch), T(0));
    g.gamma.assign(static_cast<std::size_t>(cch), T(0));
    g.beta.assign(static_cast<std::size_t>(cch), T(0));

    Mat<T> u(nb, cch);  // dL/d s_hat
    for (int n = 0; n < nb; ++n) {
        for (int c = 0; c < cch; ++c) {
            const T* gp = grad_out.plane(n, c);
            const T* xp = x.plane(n, c);
            T dot = T(0);
            for (std::int64_t i = 0; i < hw; ++i) dot += gp[i] * xp[i];
            const T hprime = detail::gate_derivative(cache.gate.at(n, c), params.adaptation);
            const T dz = dot * hprime;
            g.beta[static_cast<std::size_t>(c)] += dz;
            g.gamma[static_cast<std::size_t>(c)] += dz * cache.s_hat.at(n, c);
            u.at(n, c) = dz * params.gamma[static_cast<std::size_t>(c)];
        }
    }

    Mat<T> v(nb, cch);  // dL/d s
    for (int n = 0; n < nb; ++n) {
        const T* srow = &cache.s.v[static_cast<std::size_t>(n) * cch];
        const T* urow = &u.v[static_cast<std::size_t>(n) * cch];
        T* vrow = &v.v[static_cast<std::size_t>(n) * cch];
        const T t = cache.denom[static_cast<std::size_t>(n)];
        switch (params.channel_norm) {
            case ChannelNorm::L2: {
                T us = T(0);
                for (int k = 0; k < cch; ++k) us += urow[k] * srow[k];
                if (params.eps_mode == NormEpsMode::AddToSum) {
                    const T sc = std::sqrt(cf);
                    const T t3 = t * t * t;
                    for (int k = 0; k < cch; ++k)
                        vrow[k] = sc * (urow[k] / t - srow[k] * us / t3);
                } else {
                    const T t3 = t * t * t;
                    for (int k = 0; k < cch; ++k)
                        vrow[k] = urow[k] / t - srow[k] * us / (cf * t3);
                }
                break;
            }
            case ChannelNorm::L1: {
                T us = T(0);
                for (int k = 0; k < cch; ++k) us += urow[k] * srow[k];
                if (params.eps_mode == NormEpsMode::AddToSum) {
                    const T t2 = t * t;
                    for (int k = 0; k < cch; ++k)
                        vrow[k] = cf * (urow[k] / t - detail::sign_of(srow[k]) * us / t2);
                } else {
                    const T t2 = t * t;
                    for (int k = 0; k < cch; ++k)
                        vrow[k] = urow[k] / t - detail::sign_of(srow[k]) * us / (cf * t2);
                }
                break;
            }
            case ChannelNorm::MeanVar: {
                const T m = cache.mu[static_cast<std::size_t>(n)];
                const T sd = cache.sigma[static_cast<std::size_t>(n)];
                T usum = T(0);
                T p = T(0);
                for (int k = 0; k < cch; ++k) {
                    usum += urow[k];
                    p += urow[k] * (srow[k] - m);
                }
                const T umean = usum / cf;
                for (int k = 0; k < cch; ++k) {
                    T val = (urow[k] - umean) / t;
                    if (sd > T(0)) {
                        val -= p * (srow[k] - m) / (t * t * cf * sd);
                    }
                    vrow[k] = val;
                }
                break;
            }
        }
    }

    // Embedding backward plus the direct gating path.
    for (int n = 0; n < nb; ++n) {
        for (int c = 0; c < cch; ++c) {
            const T r = cache.embed_raw.at(n, c);
            const T a = params.alpha[static_cast<std::size_t>(c)];
            const T vv = v.at(n, c);
            g.alpha[static_cast<std::size_t>(c)] += vv * r;

            const T* gp = grad_out.plane(n, c);
            const T* xp = x.plane(n, c);
            T* op = g.x.plane(n, c);
            const T gate = cache.gate.at(n, c);
            switch (params.embed_norm) {
                case EmbedNorm::L2: {
                    const T coef = r > T(0) ? vv * a / r : T(0);
                    for (std::int64_t i = 0; i < hw; ++i) op[i] = gp[i] * gate + coef * xp[i];
                    break;
                }
                case EmbedNorm::L1: {
                    const T coef = vv * a;
                    for (std::int64_t i = 0; i < hw; ++i)
                        op[i] = gp[i] * gate + coef * detail::sign_of(xp[i]);
                    break;
                }
                case EmbedNorm::Linf: {
                    for (std::int64_t i = 0; i < hw; ++i) op[i] = gp[i] * gate;
                    // Route the norm gradient to the first maximal position,
                    // matching the reduction's tie-break.
                    std::int64_t arg = 0;
                    T best = std::abs(xp[0]);
                    for (std::int64_t i = 1; i < hw; ++i) {
                        const T mag = std::abs(xp[i]);
                        if (mag > best) {
                            best = mag;
                            arg = i;
                        }
                    }
                    if (best > T(0)) op[arg] += vv * a * detail::sign_of(xp[arg]);
                    break;
                }
            }
        }
    }
    return g;
}

// --- serialization ----------------------------------------------------

inline std::string to_string(EmbedNorm v) {
    switch (v) {
        case EmbedNorm::L1: return "l1";
        case EmbedNorm::L2: return "l2";
        default: return "linf";
    }
}

inline std::string to_string(ChannelNorm v) {
    switch (v) {
        case ChannelNorm::L1: return "l1";
        case ChannelNorm::L2: return "l2";
        default: return "mean_var";
    }
}

inline std::string to_string(Adaptation v) {
    switch (v) {
        case Adaptation::OnePlusTanh: return "one_plus_tanh";
        case Adaptation::Sigmoid: return "sigmoid";
        default: return "one_plus_elu";
    }
}

inline std::string to_string(NormEpsMode v) {
    return v == NormEpsMode::AddToSum ? "sum" : "mean";
}

inline EmbedNorm embed_norm_from_string(const std::string& s) {
    if (s == "l1") return EmbedNorm::L1;
    if (s == "l2") return EmbedNorm::L2;
    if (s == "linf") return EmbedNorm::Linf;
    throw ConfigError("unknown embed_norm '" + s + "' (expected l1|l2|linf)");
}

inline ChannelNorm channel_norm_from_string(const std::string& s) {
    if (s == "l1") return ChannelNorm::L1;
    if (s == "l2") return ChannelNorm::L2;
    if (s == "mean_var") return ChannelNorm::MeanVar;
    throw ConfigError("unknown channel_norm '" + s + "' (expected l1|l2|mean_var)");
}

inline Adaptation adaptation_from_string(const std::string& s) {
    if (s == "one_plus_tanh") return Adaptation::OnePlusTanh;
    if (s == "sigmoid") return Adaptation::Sigmoid;
    if (s == "one_plus_elu") return Adaptation::OnePlusElu;
    throw ConfigError("unknown adaptation '" + s + "' (expected one_plus_tanh|sigmoid|one_plus_elu)");
}

inline NormEpsMode norm_eps_mode_from_string(const std::string& s) {
    if (s == "sum") return NormEpsMode::AddToSum;
    if (s == "mean") return NormEpsMode::AddToMean;
    throw ConfigError("unknown norm_eps_mode '" + s + "' (expected sum|mean)");
}

// Flat JSON object {alpha, gamma, beta, epsilon, embed_norm, channel_norm,
// adaptation [, norm_eps_mode]} consumed by the checkpoint format.
template <typename T>
nlohmann::json gct_params_to_json(const GctParams<T>& p) {
    nlohmann::json j;
    j["alpha"] = p.alpha;
    j["gamma"] = p.gamma;
    j["beta"] = p.beta;
    j["epsilon"] = p.epsilon;
    j["embed_norm"] = to_string(p.embed_norm);
    j["channel_norm"] = to_string(p.channel_norm);
    j["adaptation"] = to_string(p.adaptation);
    if (p.eps_mode != NormEpsMode::AddToSum) j["norm_eps_mode"] = to_string(p.eps_mode);
    return j;
}

template <typename T>
GctParams<T> gct_params_from_json(const nlohmann::json& j) {
    GctParams<T> p;
    p.alpha = j.at("alpha").get<std::vector<T>>();
    p.gamma = j.at("gamma").get<std::vector<T>>();
    p.beta = j.at("beta").get<std::vector<T>>();
    p.epsilon = static_cast<T>(j.at("epsilon").get<double>());
    p.embed_norm = embed_norm_from_string(j.at("embed_norm").get<std::string>());
    p.channel_norm = channel_norm_from_string(j.at("channel_norm").get<std::string>());
    p.adaptation = adaptation_from_string(j.at("adaptation").get<std::string>());
    if (j.contains("norm_eps_mode")) {
        p.eps_mode = norm_eps_mode_from_string(j.at("norm_eps_mode").get<std::string>());
    }
    p.validate();
    return p;
}

}  // namespace gctnet
