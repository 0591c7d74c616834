#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gctnet/errors.hpp"
#include "gctnet/gct.hpp"
#include "gctnet/gemm.hpp"
#include "gctnet/rng.hpp"
#include "gctnet/tensor.hpp"

namespace gctnet {

enum class Mode { Train, Eval };

enum class ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    BnScale,
    BnShift,
    GctAlpha,
    GctGamma,
    GctBeta,
    SeWeight,
};

// A view over one named trainable array and its gradient accumulator.
template <typename T>
struct ParamSlot {
    std::string name;
    ParamKind kind;
    T* data = nullptr;
    T* grad = nullptr;
    std::int64_t count = 0;
};

// Non-trainable persistent state (batch-norm running statistics).
template <typename T>
struct StateSlot {
    std::string name;
    T* data = nullptr;
    std::int64_t count = 0;
};

template <typename T>
class Layer {
  public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;
    Layer(const Layer&) = delete;
    Layer& operator=(const Layer&) = delete;

    const std::string& name() const { return name_; }

    virtual void init_params(Rng&) {}
    virtual Tensor4<T> forward(const Tensor4<T>& x, Mode mode) = 0;
    virtual Tensor4<T> backward(const Tensor4<T>& grad_out) = 0;
    virtual Shape4 output_shape(const Shape4& in) const { return in; }
    virtual void collect_params(const std::string&, std::vector<ParamSlot<T>>&) {}
    virtual void collect_state(const std::string&, std::vector<StateSlot<T>>&) {}
    virtual void zero_grad() {}
    virtual void visit(const std::function<void(Layer<T>&)>& f) { f(*this); }
    // Visitor that carries the hierarchical name prefix (residual branches
    // extend it), so callers can form globally unique layer names.
    virtual void visit_prefixed(const std::string& prefix,
                                const std::function<void(const std::string&, Layer<T>&)>& f) {
        f(prefix, *this);
    }

  private:
    std::string name_;
};

namespace detail {

// Sum of grad_out * x over each channel plane, the common reduction of the
// gating layers.
template <typename T>
Mat<T> plane_dot(const Tensor4<T>& g, const Tensor4<T>& x) {
    Mat<T> out(x.n(), x.c());
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T* gp = g.plane(n, c);
            const T* xp = x.plane(n, c);
            T acc = T(0);
            for (std::int64_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
            out.at(n, c) = acc;
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
class Conv2d : public Layer<T> {
  public:
    Conv2d(std::string name, int in_c, int out_c, int kernel, int stride, int pad,
           bool bias = false)
        : Layer<T>(std::move(name)),
          in_c_(in_c),
          out_c_(out_c),
          k_(kernel),
          stride_(stride),
          pad_(pad),
          has_bias_(bias),
          w_(out_c, in_c, kernel, kernel),
          gw_(out_c, in_c, kernel, kernel) {
        if (bias) {
            b_.assign(static_cast<std::size_t>(out_c), T(0));
            gb_.assign(static_cast<std::size_t>(out_c), T(0));
        }
    }

    void init_params(Rng& rng) override {
        const T stddev = std::sqrt(T(2) / static_cast<T>(in_c_ * k_ * k_));
        for (std::int64_t i = 0; i < w_.size(); ++i)
            w_[i] = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        if (has_bias_) std::fill(b_.begin(), b_.end(), T(0));
    }

    Tensor4<T> forward(const Tensor4<T>& x, Mode) override {
        x_ = x;
        Tensor4<T> y = conv2d_forward(x, w_, stride_, pad_);
        if (has_bias_) {
            const std::int64_t hw = static_cast<std::int64_t>(y.h()) * y.w();
            for (int n = 0; n < y.n(); ++n)
                for (int c = 0; c < y.c(); ++c) {
                    T* p = y.plane(n, c);
                    const T bc = b_[static_cast<std::size_t>(c)];
                    for (std::int64_t i = 0; i < hw; ++i) p[i] += bc;
                }
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        if (x_.size() == 0) throw ShapeError(this->name() + ": backward before forward");
        Conv2dGrads<T> g = conv2d_backward(x_, w_, grad_out, stride_, pad_);
        for (std::int64_t i = 0; i < gw_.size(); ++i) gw_[i] += g.weight[i];
        if (has_bias_) {
            const std::int64_t hw = static_cast<std::int64_t>(grad_out.h()) * grad_out.w();
            for (int n = 0; n < grad_out.n(); ++n)
                for (int c = 0; c < grad_out.c(); ++c) {
                    const T* p = grad_out.plane(n, c);
                    T acc = T(0);
                    for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
                    gb_[static_cast<std::size_t>(c)] += acc;
                }
        }
        return std::move(g.x);
    }

    Shape4 output_shape(const Shape4& in) const override {
        return Shape4{in.n, out_c_, conv_out_dim(in.h, k_, stride_, pad_),
                      conv_out_dim(in.w, k_, stride_, pad_)};
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        out.push_back({prefix + this->name() + ".weight", ParamKind::ConvWeight, w_.data(),
                       gw_.data(), w_.size()});
        if (has_bias_) {
            out.push_back({prefix + this->name() + ".bias", ParamKind::Bias, b_.data(),
                           gb_.data(), static_cast<std::int64_t>(b_.size())});
        }
    }

    void zero_grad() override {
        gw_.fill(T(0));
        std::fill(gb_.begin(), gb_.end(), T(0));
    }

    Tensor4<T>& weight() { return w_; }
    int out_channels() const { return out_c_; }

  private:
    int in_c_, out_c_, k_, stride_, pad_;
    bool has_bias_;
    Tensor4<T> w_, gw_;
    std::vector<T> b_, gb_;
    Tensor4<T> x_;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
  public:
    // momentum follows the running = momentum*running + (1-momentum)*batch
    // convention.
    BatchNorm2d(std::string name, int channels, T momentum = T(0.9), T eps = T(1e-5))
        : Layer<T>(std::move(name)),
          c_(channels),
          momentum_(momentum),
          eps_(eps),
          scale_(static_cast<std::size_t>(channels), T(1)),
          shift_(static_cast<std::size_t>(channels), T(0)),
          gscale_(static_cast<std::size_t>(channels), T(0)),
          gshift_(static_cast<std::size_t>(channels), T(0)),
          run_mean_(static_cast<std::size_t>(channels), T(0)),
          run_var_(static_cast<std::size_t>(channels), T(1)) {}

    Tensor4<T> forward(const Tensor4<T>& x, Mode mode) override {
        if (x.c() != c_) throw ShapeError(this->name() + ": channel mismatch");
        mode_ = mode;
        const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
        const std::int64_t m = static_cast<std::int64_t>(x.n()) * hw;
        Tensor4<T> y(x.shape());
        if (mode == Mode::Train) {
            mean_.assign(static_cast<std::size_t>(c_), T(0));
            inv_std_.assign(static_cast<std::size_t>(c_), T(0));
            xhat_ = Tensor4<T>(x.shape());
            for (int c = 0; c < c_; ++c) {
                T sum = T(0);
                for (int n = 0; n < x.n(); ++n) {
                    const T* p = x.plane(n, c);
                    for (std::int64_t i = 0; i < hw; ++i) sum += p[i];
                }
                const T mean = sum / static_cast<T>(m);
                T varsum = T(0);
                for (int n = 0; n < x.n(); ++n) {
                    const T* p = x.plane(n, c);
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const T d = p[i] - mean;
                        varsum += d * d;
                    }
                }
                const T var = varsum / static_cast<T>(m);  // population
                const T inv = T(1) / std::sqrt(var + eps_);
                mean_[static_cast<std::size_t>(c)] = mean;
                inv_std_[static_cast<std::size_t>(c)] = inv;
                run_mean_[static_cast<std::size_t>(c)] =
                    momentum_ * run_mean_[static_cast<std::size_t>(c)] + (T(1) - momentum_) * mean;
                run_var_[static_cast<std::size_t>(c)] =
                    momentum_ * run_var_[static_cast<std::size_t>(c)] + (T(1) - momentum_) * var;
                const T sc = scale_[static_cast<std::size_t>(c)];
                const T sh = shift_[static_cast<std::size_t>(c)];
                for (int n = 0; n < x.n(); ++n) {
                    const T* p = x.plane(n, c);
                    T* xh = xhat_.plane(n, c);
                    T* yp = y.plane(n, c);
                    for (std::int64_t i = 0; i < hw; ++i) {
                        xh[i] = (p[i] - mean) * inv;
                        yp[i] = sc * xh[i] + sh;
                    }
                }
            }
        } else {
            for (int c = 0; c < c_; ++c) {
                const T inv = T(1) / std::sqrt(run_var_[static_cast<std::size_t>(c)] + eps_);
                const T mean = run_mean_[static_cast<std::size_t>(c)];
                const T sc = scale_[static_cast<std::size_t>(c)];
                const T sh = shift_[static_cast<std::size_t>(c)];
                for (int n = 0; n < x.n(); ++n) {
                    const T* p = x.plane(n, c);
                    T* yp = y.plane(n, c);
                    for (std::int64_t i = 0; i < hw; ++i) yp[i] = sc * (p[i] - mean) * inv + sh;
                }
            }
            eval_inv_.assign(static_cast<std::size_t>(c_), T(0));
            for (int c = 0; c < c_; ++c)
                eval_inv_[static_cast<std::size_t>(c)] =
                    T(1) / std::sqrt(run_var_[static_cast<std::size_t>(c)] + eps_);
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        const std::int64_t hw = static_cast<std::int64_t>(grad_out.h()) * grad_out.w();
        Tensor4<T> gx(grad_out.shape());
        if (mode_ == Mode::Eval) {
            for (int c = 0; c < c_; ++c) {
                const T k = scale_[static_cast<std::size_t>(c)] * eval_inv_[static_cast<std::size_t>(c)];
                for (int n = 0; n < grad_out.n(); ++n) {
                    const T* gp = grad_out.plane(n, c);
                    T* op = gx.plane(n, c);
                    for (std::int64_t i = 0; i < hw; ++i) op[i] = gp[i] * k;
                }
            }
            return gx;
        }
        if (xhat_.size() == 0) throw ShapeError(this->name() + ": backward before forward");
        const std::int64_t m = static_cast<std::int64_t>(grad_out.n()) * hw;
        const T mf = static_cast<T>(m);
        for (int c = 0; c < c_; ++c) {
            T sum_g = T(0), sum_gx = T(0);
            for (int n = 0; n < grad_out.n(); ++n) {
                const T* gp = grad_out.plane(n, c);
                const T* xh = xhat_.plane(n, c);
                for (std::int64_t i = 0; i < hw; ++i) {
                    sum_g += gp[i];
                    sum_gx += gp[i] * xh[i];
                }
            }
            gscale_[static_cast<std::size_t>(c)] += sum_gx;
            gshift_[static_cast<std::size_t>(c)] += sum_g;
            const T k = scale_[static_cast<std::size_t>(c)] *
                        inv_std_[static_cast<std::size_t>(c)] / mf;
            for (int n = 0; n < grad_out.n(); ++n) {
                const T* gp = grad_out.plane(n, c);
                const T* xh = xhat_.plane(n, c);
                T* op = gx.plane(n, c);
                for (std::int64_t i = 0; i < hw; ++i)
                    op[i] = k * (mf * gp[i] - sum_g - xh[i] * sum_gx);
            }
        }
        return gx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        out.push_back({prefix + this->name() + ".scale", ParamKind::BnScale, scale_.data(),
                       gscale_.data(), static_cast<std::int64_t>(scale_.size())});
        out.push_back({prefix + this->name() + ".shift", ParamKind::BnShift, shift_.data(),
                       gshift_.data(), static_cast<std::int64_t>(shift_.size())});
    }

    void collect_state(const std::string& prefix, std::vector<StateSlot<T>>& out) override {
        out.push_back({prefix + this->name() + ".running_mean", run_mean_.data(),
                       static_cast<std::int64_t>(run_mean_.size())});
        out.push_back({prefix + this->name() + ".running_var", run_var_.data(),
                       static_cast<std::int64_t>(run_var_.size())});
    }

    void zero_grad() override {
        std::fill(gscale_.begin(), gscale_.end(), T(0));
        std::fill(gshift_.begin(), gshift_.end(), T(0));
    }

    std::vector<T>& running_mean() { return run_mean_; }
    std::vector<T>& running_var() { return run_var_; }

  private:
    int c_;
    T momentum_, eps_;
    std::vector<T> scale_, shift_, gscale_, gshift_;
    std::vector<T> run_mean_, run_var_;
    Mode mode_ = Mode::Train;
    std::vector<T> mean_, inv_std_, eval_inv_;
    Tensor4<T> xhat_;
};

template <typename T>
class ReLU : public Layer<T> {
  public:
    explicit ReLU(std::string name) : Layer<T>(std::move(name)) {}

    Tensor4<T> forward(const Tensor4<T>& x, Mode) override {
        mask_.assign(static_cast<std::size_t>(x.size()), 0);
        Tensor4<T> y(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i) {
            const bool pos = x[i] > T(0);
            mask_[static_cast<std::size_t>(i)] = pos;
            y[i] = pos ? x[i] : T(0);
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        if (mask_.size() != static_cast<std::size_t>(grad_out.size()))
            throw ShapeError(this->name() + ": backward shape mismatch");
        Tensor4<T> gx(grad_out.shape());
        for (std::int64_t i = 0; i < grad_out.size(); ++i)
            gx[i] = mask_[static_cast<std::size_t>(i)] ? grad_out[i] : T(0);
        return gx;
    }

  private:
    std::vector<unsigned char> mask_;
};

template <typename T>
class MaxPool2d : public Layer<T> {
  public:
    MaxPool2d(std::string name, int kernel, int stride, int pad = 0)
        : Layer<T>(std::move(name)), k_(kernel), stride_(stride), pad_(pad) {
        if (pad_ >= k_) throw ShapeError(this->name() + ": pad must be < kernel");
    }

    Tensor4<T> forward(const Tensor4<T>& x, Mode) override {
        in_shape_ = x.shape();
        const int oh = conv_out_dim(x.h(), k_, stride_, pad_);
        const int ow = conv_out_dim(x.w(), k_, stride_, pad_);
        Tensor4<T> y(x.n(), x.c(), oh, ow);
        argmax_.assign(static_cast<std::size_t>(y.size()), 0);
        std::int64_t oi = 0;
        for (int n = 0; n < x.n(); ++n) {
            for (int c = 0; c < x.c(); ++c) {
                const T* p = x.plane(n, c);
                for (int i = 0; i < oh; ++i) {
                    for (int j = 0; j < ow; ++j, ++oi) {
                        const int h0 = i * stride_ - pad_;
                        const int w0 = j * stride_ - pad_;
                        T best = -std::numeric_limits<T>::infinity();
                        std::int64_t arg = -1;
                        for (int dh = 0; dh < k_; ++dh) {
                            const int h = h0 + dh;
                            if (h < 0 || h >= x.h()) continue;
                            for (int dw = 0; dw < k_; ++dw) {
                                const int w = w0 + dw;
                                if (w < 0 || w >= x.w()) continue;
                                const std::int64_t idx = static_cast<std::int64_t>(h) * x.w() + w;
                                if (p[idx] > best) {
                                    best = p[idx];
                                    arg = idx;
                                }
                            }
                        }
                        y[oi] = best;
                        argmax_[static_cast<std::size_t>(oi)] = arg;
                    }
                }
            }
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        if (argmax_.size() != static_cast<std::size_t>(grad_out.size()))
            throw ShapeError(this->name() + ": backward shape mismatch");
        Tensor4<T> gx(in_shape_);
        gx.fill(T(0));
        std::int64_t oi = 0;
        for (int n = 0; n < grad_out.n(); ++n) {
            for (int c = 0; c < grad_out.c(); ++c) {
                T* op = gx.plane(n, c);
                const std::int64_t cnt = static_cast<std::int64_t>(grad_out.h()) * grad_out.w();
                const T* gp = grad_out.plane(n, c);
                for (std::int64_t i = 0; i < cnt; ++i, ++oi)
                    op[argmax_[static_cast<std::size_t>(oi)]] += gp[i];
            }
        }
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override {
        return Shape4{in.n, in.c, conv_out_dim(in.h, k_, stride_, pad_),
                      conv_out_dim(in.w, k_, stride_, pad_)};
    }

  private:
    int k_, stride_, pad_;
    Shape4 in_shape_{};
    std::vector<std::int64_t> argmax_;
};

template <typename T>
class GlobalAvgPool : public Layer<T> {
  public:
    explicit GlobalAvgPool(std::string name) : Layer<T>(std::move(name)) {}

    Tensor4<T> forward(const Tensor4<T>& x, Mode) override {
        in_shape_ = x.shape();
        Tensor4<T> y(x.n(), x.c(), 1, 1);
        const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
        for (int n = 0; n < x.n(); ++n)
            for (int c = 0; c < x.c(); ++c) {
                const T* p = x.plane(n, c);
                T acc = T(0);
                for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
                y.at(n, c, 0, 0) = acc / static_cast<T>(hw);
            }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        Tensor4<T> gx(in_shape_);
        const std::int64_t hw = static_cast<std::int64_t>(in_shape_.h) * in_shape_.w;
        for (int n = 0; n < grad_out.n(); ++n)
            for (int c = 0; c < grad_out.c(); ++c) {
                const T g = grad_out.at(n, c, 0, 0) / static_cast<T>(hw);
                T* op = gx.plane(n, c);
                for (std::int64_t i = 0; i < hw; ++i) op[i] = g;
            }
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override { return Shape4{in.n, in.c, 1, 1}; }

  private:
    Shape4 in_shape_{};
};

// Fully connected layer over the flattened (C*H*W) features of each sample.
template <typename T>
class Linear : public Layer<T> {
  public:
    Linear(std::string name, int in_features, int out_features, bool bias = true)
        : Layer<T>(std::move(name)),
          in_(in_features),
          out_(out_features),
          has_bias_(bias),
          w_(static_cast<std::size_t>(in_features) * out_features, T(0)),
          gw_(w_.size(), T(0)) {
        if (bias) {
            b_.assign(static_cast<std::size_t>(out_features), T(0));
            gb_.assign(b_.size(), T(0));
        }
    }

    void init_params(Rng& rng) override {
        const T stddev = std::sqrt(T(2) / static_cast<T>(in_));
        for (T& v : w_) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        if (has_bias_) std::fill(b_.begin(), b_.end(), T(0));
    }

    Tensor4<T> forward(const Tensor4<T>& x, Mode) override {
        const std::int64_t feat = static_cast<std::int64_t>(x.c()) * x.h() * x.w();
        if (feat != in_)
            throw ShapeError(this->name() + ": expected " + std::to_string(in_) +
                             " input features, got " + std::to_string(feat));
        in_shape_ = x.shape();
        x_ = x;
        Tensor4<T> y(x.n(), out_, 1, 1);
        // y (N,out) = x (N,in) * W^T, W stored (out,in) row-major
        detail::gemm_bt(x.n(), out_, in_, x.data(), w_.data(), y.data(), false);
        if (has_bias_) {
            for (int n = 0; n < x.n(); ++n)
                for (int o = 0; o < out_; ++o) y.at(n, o, 0, 0) += b_[static_cast<std::size_t>(o)];
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        if (x_.size() == 0) throw ShapeError(this->name() + ": backward before forward");
        const int n = x_.n();
        // gw (out,in) += g^T (out,N) * x (N,in)
        detail::gemm_at(out_, static_cast<int>(in_), n, grad_out.data(), x_.data(), gw_.data(),
                        true);
        if (has_bias_) {
            for (int i = 0; i < n; ++i)
                for (int o = 0; o < out_; ++o)
                    gb_[static_cast<std::size_t>(o)] += grad_out.at(i, o, 0, 0);
        }
        Tensor4<T> gx(in_shape_);
        // gx (N,in) = g (N,out) * W (out,in)
        detail::gemm(n, static_cast<int>(in_), out_, grad_out.data(), w_.data(), gx.data(), false);
        return gx;
    }

    Shape4 output_shape(const Shape4& in) const override { return Shape4{in.n, out_, 1, 1}; }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        out.push_back({prefix + this->name() + ".weight", ParamKind::LinearWeight, w_.data(),
                       gw_.data(), static_cast<std::int64_t>(w_.size())});
        if (has_bias_) {
            out.push_back({prefix + this->name() + ".bias", ParamKind::Bias, b_.data(), gb_.data(),
                           static_cast<std::int64_t>(b_.size())});
        }
    }

    void zero_grad() override {
        std::fill(gw_.begin(), gw_.end(), T(0));
        std::fill(gb_.begin(), gb_.end(), T(0));
    }

  private:
    std::int64_t in_;
    int out_;
    bool has_bias_;
    std::vector<T> w_, gw_, b_, gb_;
    Shape4 in_shape_{};
    Tensor4<T> x_;
};

// Gated channel transform as a network layer. Initialization is
// deterministic (identity), so inserting these layers does not perturb the
// random stream the surrounding layers draw from.
template <typename T>
class GctLayer : public Layer<T> {
  public:
    GctLayer(std::string name, int channels, EmbedNorm en, ChannelNorm cn, Adaptation ad,
             T epsilon, NormEpsMode em = NormEpsMode::AddToSum)
        : Layer<T>(std::move(name)), p_(GctParams<T>::fresh(channels)) {
        p_.embed_norm = en;
        p_.channel_norm = cn;
        p_.adaptation = ad;
        p_.epsilon = epsilon;
        p_.eps_mode = em;
        ga_.assign(p_.alpha.size(), T(0));
        gg_.assign(p_.alpha.size(), T(0));
        gb_.assign(p_.alpha.size(), T(0));
    }

    Tensor4<T> forward(const Tensor4<T>& x, Mode) override {
        auto [y, cache] = gct_forward(x, p_);
        cache_ = std::move(cache);
        has_cache_ = true;
        if (probe_on_) accumulate_probe(x, y);
        return std::move(y);
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        if (!has_cache_) throw ShapeError(this->name() + ": backward before forward");
        GctGrads<T> g = gct_backward(cache_, grad_out, p_);
        for (std::size_t i = 0; i < ga_.size(); ++i) {
            ga_[i] += g.alpha[i];
            gg_[i] += g.gamma[i];
            gb_[i] += g.beta[i];
        }
        return std::move(g.x);
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        const std::string base = prefix + this->name();
        const auto count = static_cast<std::int64_t>(p_.alpha.size());
        out.push_back({base + ".alpha", ParamKind::GctAlpha, p_.alpha.data(), ga_.data(), count});
        out.push_back({base + ".gamma", ParamKind::GctGamma, p_.gamma.data(), gg_.data(), count});
        out.push_back({base + ".beta", ParamKind::GctBeta, p_.beta.data(), gb_.data(), count});
    }

    void zero_grad() override {
        std::fill(ga_.begin(), ga_.end(), T(0));
        std::fill(gg_.begin(), gg_.end(), T(0));
        std::fill(gb_.begin(), gb_.end(), T(0));
    }

    GctParams<T>& params() { return p_; }
    const GctParams<T>& params() const { return p_; }

    // Variance probe: accumulates per-channel input/output moments across
    // forward passes while enabled.
    void probe_enable(bool on) {
        probe_on_ = on;
        if (on) probe_reset();
    }
    void probe_reset() {
        const std::size_t c = p_.alpha.size();
        in_sum_.assign(c, 0.0);
        in_sumsq_.assign(c, 0.0);
        out_sum_.assign(c, 0.0);
        out_sumsq_.assign(c, 0.0);
        probe_count_ = 0;
    }
    bool probe_enabled() const { return probe_on_; }
    std::int64_t probe_count() const { return probe_count_; }
    // Population variance / mean per channel of everything seen so far.
    std::vector<double> probe_in_variance() const { return variance(in_sum_, in_sumsq_); }
    std::vector<double> probe_out_variance() const { return variance(out_sum_, out_sumsq_); }
    std::vector<double> probe_in_mean() const { return mean(in_sum_); }
    std::vector<double> probe_out_mean() const { return mean(out_sum_); }

  private:
    void accumulate_probe(const Tensor4<T>& x, const Tensor4<T>& y) {
        const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
        for (int n = 0; n < x.n(); ++n)
            for (int c = 0; c < x.c(); ++c) {
                const T* xp = x.plane(n, c);
                const T* yp = y.plane(n, c);
                double sx = 0, sxx = 0, sy = 0, syy = 0;
                for (std::int64_t i = 0; i < hw; ++i) {
                    sx += xp[i];
                    sxx += static_cast<double>(xp[i]) * xp[i];
                    sy += yp[i];
                    syy += static_cast<double>(yp[i]) * yp[i];
                }
                in_sum_[static_cast<std::size_t>(c)] += sx;
                in_sumsq_[static_cast<std::size_t>(c)] += sxx;
                out_sum_[static_cast<std::size_t>(c)] += sy;
                out_sumsq_[static_cast<std::size_t>(c)] += syy;
            }
        probe_count_ += static_cast<std::int64_t>(x.n()) * hw;
    }

    std::vector<double> variance(const std::vector<double>& sum,
                                 const std::vector<double>& sumsq) const {
        std::vector<double> v(sum.size(), 0.0);
        if (probe_count_ == 0) return v;
        const double m = static_cast<double>(probe_count_);
        for (std::size_t c = 0; c < sum.size(); ++c) {
            const double mean = sum[c] / m;
            v[c] = sumsq[c] / m - mean * mean;
            if (v[c] < 0.0) v[c] = 0.0;  // rounding guard
        }
        return v;
    }

    std::vector<double> mean(const std::vector<double>& sum) const {
        std::vector<double> v(sum.size(), 0.0);
        if (probe_count_ == 0) return v;
        for (std::size_t c = 0; c < sum.size(); ++c)
            v[c] = sum[c] / static_cast<double>(probe_count_);
        return v;
    }

    GctParams<T> p_;
    std::vector<T> ga_, gg_, gb_;
    GctCache<T> cache_;
    bool has_cache_ = false;
    bool probe_on_ = false;
    std::vector<double> in_sum_, in_sumsq_, out_sum_, out_sumsq_;
    std::int64_t probe_count_ = 0;
};

// Squeeze-and-excitation gate: global average pool, two fully connected
// layers (no biases), sigmoid, channel-wise rescale.
template <typename T>
class SeBlock : public Layer<T> {
  public:
    SeBlock(std::string name, int channels, int hidden)
        : Layer<T>(std::move(name)),
          c_(channels),
          hidden_(hidden),
          w1_(static_cast<std::size_t>(hidden) * channels, T(0)),
          w2_(static_cast<std::size_t>(channels) * hidden, T(0)),
          gw1_(w1_.size(), T(0)),
          gw2_(w2_.size(), T(0)) {}

    void init_params(Rng& rng) override {
        const T s1 = std::sqrt(T(2) / static_cast<T>(c_));
        for (T& v : w1_) v = static_cast<T>(rng.normal(0.0, static_cast<double>(s1)));
        const T s2 = std::sqrt(T(2) / static_cast<T>(hidden_));
        for (T& v : w2_) v = static_cast<T>(rng.normal(0.0, static_cast<double>(s2)));
    }

    Tensor4<T> forward(const Tensor4<T>& x, Mode) override {
        if (x.c() != c_) throw ShapeError(this->name() + ": channel mismatch");
        x_ = x;
        const int n = x.n();
        const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
        z_ = Mat<T>(n, c_);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < c_; ++c) {
                const T* p = x.plane(i, c);
                T acc = T(0);
                for (std::int64_t k = 0; k < hw; ++k) acc += p[k];
                z_.at(i, c) = acc / static_cast<T>(hw);
            }
        h_ = Mat<T>(n, hidden_);
        detail::gemm_bt(n, hidden_, c_, z_.v.data(), w1_.data(), h_.v.data(), false);
        for (T& v : h_.v) v = v > T(0) ? v : T(0);
        gate_ = Mat<T>(n, c_);
        detail::gemm_bt(n, c_, hidden_, h_.v.data(), w2_.data(), gate_.v.data(), false);
        for (T& v : gate_.v) v = T(1) / (T(1) + std::exp(-v));
        Tensor4<T> y(x.shape());
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < c_; ++c) {
                const T g = gate_.at(i, c);
                const T* p = x.plane(i, c);
                T* yp = y.plane(i, c);
                for (std::int64_t k = 0; k < hw; ++k) yp[k] = p[k] * g;
            }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        if (x_.size() == 0) throw ShapeError(this->name() + ": backward before forward");
        const int n = x_.n();
        const std::int64_t hw = static_cast<std::int64_t>(x_.h()) * x_.w();
        Mat<T> dgate = detail::plane_dot(grad_out, x_);
        // through the sigmoid
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < c_; ++c) {
                const T g = gate_.at(i, c);
                dgate.at(i, c) *= g * (T(1) - g);
            }
        // gw2 (c_,hidden) += dgate^T (c_,N) * h (N,hidden)
        detail::gemm_at(c_, hidden_, n, dgate.v.data(), h_.v.data(), gw2_.data(), true);
        Mat<T> dh(n, hidden_);
        detail::gemm(n, hidden_, c_, dgate.v.data(), w2_.data(), dh.v.data(), false);
        for (std::size_t i = 0; i < dh.v.size(); ++i)
            if (!(h_.v[i] > T(0))) dh.v[i] = T(0);
        // gw1 (hidden,c_) += dh^T (hidden,N) * z (N,c_)
        detail::gemm_at(hidden_, c_, n, dh.v.data(), z_.v.data(), gw1_.data(), true);
        Mat<T> dz(n, c_);
        detail::gemm(n, c_, hidden_, dh.v.data(), w1_.data(), dz.v.data(), false);
        Tensor4<T> gx(x_.shape());
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < c_; ++c) {
                const T g = gate_.at(i, c);
                const T dzc = dz.at(i, c) / static_cast<T>(hw);
                const T* gp = grad_out.plane(i, c);
                T* op = gx.plane(i, c);
                for (std::int64_t k = 0; k < hw; ++k) op[k] = gp[k] * g + dzc;
            }
        return gx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        const std::string base = prefix + this->name();
        out.push_back({base + ".w1", ParamKind::SeWeight, w1_.data(), gw1_.data(),
                       static_cast<std::int64_t>(w1_.size())});
        out.push_back({base + ".w2", ParamKind::SeWeight, w2_.data(), gw2_.data(),
                       static_cast<std::int64_t>(w2_.size())});
    }

    void zero_grad() override {
        std::fill(gw1_.begin(), gw1_.end(), T(0));
        std::fill(gw2_.begin(), gw2_.end(), T(0));
    }

  private:
    int c_, hidden_;
    std::vector<T> w1_, w2_, gw1_, gw2_;
    Tensor4<T> x_;
    Mat<T> z_, h_, gate_;
};

// Residual node: out = body(x) + shortcut(x); an empty shortcut is the
// identity. The activation after the sum is a separate layer.
template <typename T>
class Residual : public Layer<T> {
  public:
    Residual(std::string name, std::vector<std::unique_ptr<Layer<T>>> body,
             std::vector<std::unique_ptr<Layer<T>>> shortcut)
        : Layer<T>(std::move(name)), body_(std::move(body)), shortcut_(std::move(shortcut)) {}

    void init_params(Rng& rng) override {
        for (auto& l : body_) l->init_params(rng);
        for (auto& l : shortcut_) l->init_params(rng);
    }

    Tensor4<T> forward(const Tensor4<T>& x, Mode mode) override {
        Tensor4<T> yb = x;
        for (auto& l : body_) yb = l->forward(yb, mode);
        Tensor4<T> ys = x;
        for (auto& l : shortcut_) ys = l->forward(ys, mode);
        if (!(yb.shape() == ys.shape()))
            throw ShapeError(this->name() + ": body shape " + yb.shape().str() +
                             " != shortcut shape " + ys.shape().str());
        for (std::int64_t i = 0; i < yb.size(); ++i) yb[i] += ys[i];
        return yb;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) override {
        Tensor4<T> gb = grad_out;
        for (auto it = body_.rbegin(); it != body_.rend(); ++it) gb = (*it)->backward(gb);
        Tensor4<T> gs = grad_out;
        for (auto it = shortcut_.rbegin(); it != shortcut_.rend(); ++it) gs = (*it)->backward(gs);
        for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] += gs[i];
        return gb;
    }

    Shape4 output_shape(const Shape4& in) const override {
        Shape4 s = in;
        for (const auto& l : body_) s = l->output_shape(s);
        return s;
    }

    void collect_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) override {
        const std::string bp = prefix + this->name() + ".body.";
        for (auto& l : body_) l->collect_params(bp, out);
        const std::string sp = prefix + this->name() + ".shortcut.";
        for (auto& l : shortcut_) l->collect_params(sp, out);
    }

    void collect_state(const std::string& prefix, std::vector<StateSlot<T>>& out) override {
        const std::string bp = prefix + this->name() + ".body.";
        for (auto& l : body_) l->collect_state(bp, out);
        const std::string sp = prefix + this->name() + ".shortcut.";
        for (auto& l : shortcut_) l->collect_state(sp, out);
    }

    void zero_grad() override {
        for (auto& l : body_) l->zero_grad();
        for (auto& l : shortcut_) l->zero_grad();
    }

    void visit(const std::function<void(Layer<T>&)>& f) override {
        f(*this);
        for (auto& l : body_) l->visit(f);
        for (auto& l : shortcut_) l->visit(f);
    }

    void visit_prefixed(const std::string& prefix,
                        const std::function<void(const std::string&, Layer<T>&)>& f) override {
        f(prefix, *this);
        const std::string bp = prefix + this->name() + ".body.";
        for (auto& l : body_) l->visit_prefixed(bp, f);
        const std::string sp = prefix + this->name() + ".shortcut.";
        for (auto& l : shortcut_) l->visit_prefixed(sp, f);
    }

  private:
    std::vector<std::unique_ptr<Layer<T>>> body_;
    std::vector<std::unique_ptr<Layer<T>>> shortcut_;
};

// Softmax cross entropy over (N,K,1,1) logits, averaged over the batch.
template <typename T>
class SoftmaxXent {
  public:
    T forward(const Tensor4<T>& logits, const std::vector<int>& labels) {
        if (logits.h() != 1 || logits.w() != 1)
            throw ShapeError("softmax: expected (N,K,1,1) logits, got " + logits.shape().str());
        if (static_cast<std::size_t>(logits.n()) != labels.size())
            throw ShapeError("softmax: label count does not match batch");
        const int n = logits.n();
        const int k = logits.c();
        probs_ = Mat<T>(n, k);
        labels_ = labels;
        T total = T(0);
        for (int i = 0; i < n; ++i) {
            if (labels[static_cast<std::size_t>(i)] < 0 ||
                labels[static_cast<std::size_t>(i)] >= k)
                throw ShapeError("softmax: label out of range");
            T mx = logits.at(i, 0, 0, 0);
            for (int j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j, 0, 0));
            T denom = T(0);
            for (int j = 0; j < k; ++j) {
                const T e = std::exp(logits.at(i, j, 0, 0) - mx);
                probs_.at(i, j) = e;
                denom += e;
            }
            for (int j = 0; j < k; ++j) probs_.at(i, j) /= denom;
            total -= std::log(probs_.at(i, labels[static_cast<std::size_t>(i)]));
        }
        return total / static_cast<T>(n);
    }

    Tensor4<T> backward() const {
        const int n = probs_.rows;
        const int k = probs_.cols;
        Tensor4<T> g(n, k, 1, 1);
        const T inv = T(1) / static_cast<T>(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                T v = probs_.at(i, j);
                if (j == labels_[static_cast<std::size_t>(i)]) v -= T(1);
                g.at(i, j, 0, 0) = v * inv;
            }
        return g;
    }

    const Mat<T>& probs() const { return probs_; }

  private:
    Mat<T> probs_;
    std::vector<int> labels_;
};

// Count of top-1 matches between logits and labels.
template <typename T>
int count_correct(const Tensor4<T>& logits, const std::vector<int>& labels) {
    int correct = 0;
    for (int i = 0; i < logits.n(); ++i) {
        int arg = 0;
        T best = logits.at(i, 0, 0, 0);
        for (int j = 1; j < logits.c(); ++j) {
            if (logits.at(i, j, 0, 0) > best) {
                best = logits.at(i, j, 0, 0);
                arg = j;
            }
        }
        if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return correct;
}

}  // namespace gctnet
