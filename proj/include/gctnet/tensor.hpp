#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gctnet/errors.hpp"
#include "gctnet/gemm.hpp"

namespace gctnet {

struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape4&) const = default;

    std::int64_t count() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Dense rank-4 array in contiguous NCHW layout. The batch-major layout keeps
// each (n,c) spatial plane contiguous, so per-channel reductions walk memory
// linearly. Values are immutable once an operation has returned the tensor;
// mutation accessors exist for construction and for layers filling buffers
// they own.
template <typename T>
class Tensor4 {
  public:
    using value_type = T;

    Tensor4() = default;

    explicit Tensor4(Shape4 s) : shape_(s) {
        check_shape(s);
        data_.assign(static_cast<std::size_t>(s.count()), T(0));
    }

    Tensor4(int n, int c, int h, int w) : Tensor4(Shape4{n, c, h, w}) {}

    Tensor4(Shape4 s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
        check_shape(s);
        if (static_cast<std::int64_t>(data_.size()) != s.count()) {
            throw ShapeError("Tensor4: data length " + std::to_string(data_.size()) +
                             " does not match shape " + s.str());
        }
    }

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    std::int64_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    T& at(int n, int c, int h, int w) { return data_[static_cast<std::size_t>(index(n, c, h, w))]; }
    const T& at(int n, int c, int h, int w) const {
        return data_[static_cast<std::size_t>(index(n, c, h, w))];
    }

    // Pointer to the start of the (n,c) spatial plane.
    T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
    const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

    bool same_shape(const Tensor4& o) const { return shape_ == o.shape_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor4<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor4<U>(shape_, std::move(out));
    }

  private:
    static void check_shape(Shape4 s) {
        if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
            throw ShapeError("Tensor4: all shape components must be >= 1, got " + s.str());
        }
    }

    Shape4 shape_{};
    std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

// Small dense row-major matrix; used for the (N,C) per-sample-per-channel
// values the gating path produces.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, T(0)) {}

    T& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

template <typename T, typename F>
Tensor4<T> map_elementwise(const Tensor4<T>& t, F&& f) {
    std::vector<T> out(static_cast<std::size_t>(t.size()));
    const T* src = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) out[static_cast<std::size_t>(i)] = f(src[i]);
    return Tensor4<T>(t.shape(), std::move(out));
}

enum class SpatialReduce { Sum, SumSquares, MaxAbs, SumAbs };

// Per-(n,c) scalar reduction over all H*W positions; result is (N,C,1,1).
// Accumulation order is the memory order of the plane, so results are
// reproducible.
template <typename T>
Tensor4<T> reduce_spatial(const Tensor4<T>& t, SpatialReduce kind) {
    Tensor4<T> out(t.n(), t.c(), 1, 1);
    const std::int64_t hw = static_cast<std::int64_t>(t.h()) * t.w();
    for (int n = 0; n < t.n(); ++n) {
        for (int c = 0; c < t.c(); ++c) {
            const T* p = t.plane(n, c);
            T acc;
            switch (kind) {
                case SpatialReduce::Sum:
                    acc = T(0);
                    for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
                    break;
                case SpatialReduce::SumSquares:
                    acc = T(0);
                    for (std::int64_t i = 0; i < hw; ++i) acc += p[i] * p[i];
                    break;
                case SpatialReduce::SumAbs:
                    acc = T(0);
                    for (std::int64_t i = 0; i < hw; ++i) acc += std::abs(p[i]);
                    break;
                case SpatialReduce::MaxAbs:
                    acc = std::abs(p[0]);
                    for (std::int64_t i = 1; i < hw; ++i) acc = std::max(acc, std::abs(p[i]));
                    break;
                default:
                    acc = T(0);
            }
            out.at(n, c, 0, 0) = acc;
        }
    }
    return out;
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

enum class ConvAlgo { Direct, Im2col };

namespace detail {

// Unfold x[n] into columns: rows = C_in*kH*kW, cols = H_out*W_out.
template <typename T>
void im2col(const Tensor4<T>& x, int n, int kh, int kw, int stride, int pad,
            int out_h, int out_w, T* col) {
    const int c_in = x.c();
    const int in_h = x.h();
    const int in_w = x.w();
    std::int64_t idx = 0;
    for (int c = 0; c < c_in; ++c) {
        const T* plane = x.plane(n, c);
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                for (int oi = 0; oi < out_h; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    const bool row_ok = ii >= 0 && ii < in_h;
                    for (int oj = 0; oj < out_w; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        col[idx++] = (row_ok && jj >= 0 && jj < in_w)
                                         ? plane[static_cast<std::int64_t>(ii) * in_w + jj]
                                         : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add columns back into a spatial gradient plane set.
template <typename T>
void col2im(const T* col, int c_in, int in_h, int in_w, int kh, int kw, int stride,
            int pad, int out_h, int out_w, T* grad_plane0, std::int64_t plane_stride) {
    std::int64_t idx = 0;
    for (int c = 0; c < c_in; ++c) {
        T* plane = grad_plane0 + c * plane_stride;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                for (int oi = 0; oi < out_h; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    const bool row_ok = ii >= 0 && ii < in_h;
                    for (int oj = 0; oj < out_w; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (row_ok && jj >= 0 && jj < in_w) {
                            plane[static_cast<std::int64_t>(ii) * in_w + jj] += col[idx];
                        }
                        ++idx;
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor4<T> conv2d_direct(const Tensor4<T>& x, const Tensor4<T>& weight, int stride, int pad) {
    const int out_h = conv_out_dim(x.h(), weight.h(), stride, pad);
    const int out_w = conv_out_dim(x.w(), weight.w(), stride, pad);
    Tensor4<T> y(x.n(), weight.n(), out_h, out_w);
    for (int n = 0; n < x.n(); ++n) {
        for (int co = 0; co < weight.n(); ++co) {
            for (int oi = 0; oi < out_h; ++oi) {
                for (int oj = 0; oj < out_w; ++oj) {
                    T acc = T(0);
                    for (int ci = 0; ci < x.c(); ++ci) {
                        for (int ki = 0; ki < weight.h(); ++ki) {
                            const int ii = oi * stride - pad + ki;
                            if (ii < 0 || ii >= x.h()) continue;
                            for (int kj = 0; kj < weight.w(); ++kj) {
                                const int jj = oj * stride - pad + kj;
                                if (jj < 0 || jj >= x.w()) continue;
                                acc += x.at(n, ci, ii, jj) * weight.at(co, ci, ki, kj);
                            }
                        }
                    }
                    y.at(n, co, oi, oj) = acc;
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor4<T> conv2d_im2col(const Tensor4<T>& x, const Tensor4<T>& weight, int stride, int pad) {
    const int kh = weight.h();
    const int kw = weight.w();
    const int out_h = conv_out_dim(x.h(), kh, stride, pad);
    const int out_w = conv_out_dim(x.w(), kw, stride, pad);
    const int k_dim = x.c() * kh * kw;
    const std::int64_t cols = static_cast<std::int64_t>(out_h) * out_w;
    Tensor4<T> y(x.n(), weight.n(), out_h, out_w);
    std::vector<T> col(static_cast<std::size_t>(k_dim) * cols);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x, n, kh, kw, stride, pad, out_h, out_w, col.data());
        gemm<T>(weight.n(), static_cast<int>(cols), k_dim, weight.data(), col.data(),
                y.plane(n, 0), false);
    }
    return y;
}

}  // namespace detail

// Cross-correlation of x (N,C_in,H,W) with weight (C_out,C_in,kH,kW).
// The direct path defines the semantics; the im2col path is the fast route
// behind the same contract.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& weight, int stride,
                          int pad, ConvAlgo algo = ConvAlgo::Im2col) {
    if (weight.c() != x.c()) {
        throw ShapeError("conv2d_forward: weight expects " + std::to_string(weight.c()) +
                         " input channels, tensor has " + std::to_string(x.c()));
    }
    if (stride < 1 || pad < 0) {
        throw ShapeError("conv2d_forward: stride must be >= 1 and padding >= 0");
    }
    if (conv_out_dim(x.h(), weight.h(), stride, pad) < 1 ||
        conv_out_dim(x.w(), weight.w(), stride, pad) < 1) {
        throw ShapeError("conv2d_forward: kernel larger than padded input");
    }
    return algo == ConvAlgo::Direct ? detail::conv2d_direct(x, weight, stride, pad)
                                    : detail::conv2d_im2col(x, weight, stride, pad);
}

template <typename T>
struct Conv2dGrads {
    Tensor4<T> x;
    Tensor4<T> weight;
};

// Exact gradients of conv2d_forward with respect to input and weight.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight,
                               const Tensor4<T>& grad_out, int stride, int pad) {
    const int kh = weight.h();
    const int kw = weight.w();
    const int out_h = grad_out.h();
    const int out_w = grad_out.w();
    const int k_dim = x.c() * kh * kw;
    const std::int64_t cols = static_cast<std::int64_t>(out_h) * out_w;

    Conv2dGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(weight.shape())};
    std::vector<T> col(static_cast<std::size_t>(k_dim) * cols);
    std::vector<T> col_grad(static_cast<std::size_t>(k_dim) * cols);
    const std::int64_t plane_stride = static_cast<std::int64_t>(x.h()) * x.w();

    for (int n = 0; n < x.n(); ++n) {
        detail::im2col(x, n, kh, kw, stride, pad, out_h, out_w, col.data());
        // grad_weight += grad_out[n] * col^T
        detail::gemm_bt<T>(weight.n(), k_dim, static_cast<int>(cols), grad_out.plane(n, 0),
                           col.data(), g.weight.data(), true);
        // col_grad = weight^T * grad_out[n]
        detail::gemm_at<T>(k_dim, static_cast<int>(cols), weight.n(), weight.data(),
                           grad_out.plane(n, 0), col_grad.data(), false);
        detail::col2im(col_grad.data(), x.c(), x.h(), x.w(), kh, kw, stride, pad, out_h,
                       out_w, g.x.plane(n, 0), plane_stride);
    }
    return g;
}

template <typename T>
bool all_finite(const Tensor4<T>& t) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) return false;
    }
    return true;
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
    for (const T& x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace gctnet
