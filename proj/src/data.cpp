#include "gctnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gctnet/errors.hpp"

namespace gctnet {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff len = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> buf(static_cast<std::size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
    if (!f) throw DataError("short read from " + path);
    return buf;
}

std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace

Dataset load_mnist(const std::string& images_path, const std::string& labels_path) {
    const std::vector<unsigned char> img = read_file(images_path);
    const std::vector<unsigned char> lab = read_file(labels_path);
    if (img.size() < 16) throw DataError(images_path + ": truncated IDX header");
    if (lab.size() < 8) throw DataError(labels_path + ": truncated IDX header");
    if (be32(img.data()) != 0x00000803u)
        throw DataError(images_path + ": bad IDX magic (expected 0x00000803)");
    if (be32(lab.data()) != 0x00000801u)
        throw DataError(labels_path + ": bad IDX magic (expected 0x00000801)");
    const std::uint32_t n = be32(img.data() + 4);
    const std::uint32_t rows = be32(img.data() + 8);
    const std::uint32_t cols = be32(img.data() + 12);
    const std::uint32_t nl = be32(lab.data() + 4);
    if (n != nl)
        throw DataError("image count " + std::to_string(n) + " != label count " +
                        std::to_string(nl));
    if (n == 0) throw DataError(images_path + ": empty dataset");
    const std::size_t expect = 16 + std::size_t(n) * rows * cols;
    if (img.size() != expect) throw DataError(images_path + ": truncated image data");
    if (lab.size() != 8 + std::size_t(n)) throw DataError(labels_path + ": truncated label data");

    Dataset ds;
    ds.images = Tensor4f(static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols));
    ds.labels.resize(n);
    const unsigned char* px = img.data() + 16;
    for (std::int64_t i = 0; i < ds.images.size(); ++i)
        ds.images[i] = static_cast<float>(px[i]) / 255.0f;
    for (std::uint32_t i = 0; i < n; ++i) {
        const int v = lab[8 + i];
        if (v < 0 || v > 9) throw DataError(labels_path + ": label out of range");
        ds.labels[i] = v;
    }
    ds.class_count = 10;
    return ds;
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
    if (batch_paths.empty()) throw DataError("no CIFAR batch files given");
    constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
    std::vector<unsigned char> all;
    for (const std::string& p : batch_paths) {
        std::vector<unsigned char> buf = read_file(p);
        if (buf.empty() || buf.size() % kRecord != 0)
            throw DataError(p + ": size " + std::to_string(buf.size()) +
                            " is not a multiple of 3073");
        all.insert(all.end(), buf.begin(), buf.end());
    }
    const std::size_t n = all.size() / kRecord;
    Dataset ds;
    ds.images = Tensor4f(static_cast<int>(n), 3, 32, 32);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = all.data() + i * kRecord;
        if (rec[0] > 9) throw DataError("label out of range in CIFAR record");
        ds.labels[i] = rec[0];
        float* dst = ds.images.data() + static_cast<std::int64_t>(i) * 3 * 32 * 32;
        for (std::size_t k = 0; k < 3072; ++k) dst[k] = static_cast<float>(rec[1 + k]) / 255.0f;
    }
    ds.class_count = 10;
    return ds;
}

ChannelStats compute_channel_stats(const Dataset& ds) {
    const int c = ds.images.c();
    const std::int64_t per = static_cast<std::int64_t>(ds.images.h()) * ds.images.w();
    const std::int64_t m = static_cast<std::int64_t>(ds.images.n()) * per;
    ChannelStats st;
    st.mean.assign(static_cast<std::size_t>(c), 0.0f);
    st.stddev.assign(static_cast<std::size_t>(c), 1.0f);
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0, sumsq = 0.0;
        for (int n = 0; n < ds.images.n(); ++n) {
            const float* p = ds.images.plane(n, ch);
            for (std::int64_t i = 0; i < per; ++i) {
                sum += p[i];
                sumsq += static_cast<double>(p[i]) * p[i];
            }
        }
        const double mean = sum / static_cast<double>(m);
        double var = sumsq / static_cast<double>(m) - mean * mean;
        if (var < 0) var = 0;
        st.mean[static_cast<std::size_t>(ch)] = static_cast<float>(mean);
        st.stddev[static_cast<std::size_t>(ch)] =
            std::max(static_cast<float>(std::sqrt(var)), 1e-8f);
    }
    return st;
}

void standardize(Dataset& ds, const ChannelStats& stats) {
    if (stats.mean.size() != static_cast<std::size_t>(ds.images.c()))
        throw DataError("channel stats do not match dataset channels");
    const std::int64_t per = static_cast<std::int64_t>(ds.images.h()) * ds.images.w();
    for (int n = 0; n < ds.images.n(); ++n)
        for (int c = 0; c < ds.images.c(); ++c) {
            float* p = ds.images.plane(n, c);
            const float mu = stats.mean[static_cast<std::size_t>(c)];
            const float inv = 1.0f / stats.stddev[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < per; ++i) p[i] = (p[i] - mu) * inv;
        }
}

void destandardize(Dataset& ds, const ChannelStats& stats) {
    if (stats.mean.size() != static_cast<std::size_t>(ds.images.c()))
        throw DataError("channel stats do not match dataset channels");
    const std::int64_t per = static_cast<std::int64_t>(ds.images.h()) * ds.images.w();
    for (int n = 0; n < ds.images.n(); ++n)
        for (int c = 0; c < ds.images.c(); ++c) {
            float* p = ds.images.plane(n, c);
            const float mu = stats.mean[static_cast<std::size_t>(c)];
            const float sd = stats.stddev[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < per; ++i) p[i] = p[i] * sd + mu;
        }
}

Dataset take(const Dataset& ds, int offset, int count) {
    if (offset < 0 || count < 1 || offset + count > ds.size())
        throw DataError("subset [" + std::to_string(offset) + ", " +
                        std::to_string(offset + count) + ") out of range for " +
                        std::to_string(ds.size()) + " samples");
    Dataset out;
    out.class_count = ds.class_count;
    out.images = Tensor4f(count, ds.images.c(), ds.images.h(), ds.images.w());
    out.labels.assign(ds.labels.begin() + offset, ds.labels.begin() + offset + count);
    const std::int64_t per =
        static_cast<std::int64_t>(ds.images.c()) * ds.images.h() * ds.images.w();
    std::memcpy(out.images.data(), ds.images.data() + std::int64_t(offset) * per,
                static_cast<std::size_t>(count * per) * sizeof(float));
    return out;
}

std::string to_string(Augment a) { return a == Augment::None ? "none" : "flip_crop"; }

Augment augment_from_string(const std::string& s) {
    if (s == "none") return Augment::None;
    if (s == "flip_crop") return Augment::FlipCrop;
    throw ConfigError("unknown augment '" + s + "' (expected none|flip_crop)");
}

BatchStream::BatchStream(const Dataset& ds, int batch_size, std::uint64_t seed, Augment augment)
    : ds_(ds), batch_size_(batch_size), seed_(seed), augment_(augment) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (ds.size() == 0) throw DataError("empty dataset");
}

void BatchStream::start_epoch(int epoch) {
    const int n = ds_.size();
    order_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
    Rng rng(Rng::mix(seed_, static_cast<std::uint64_t>(epoch)));
    // Fisher-Yates
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(0, i));
        std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(j)]);
    }
    flip_.assign(static_cast<std::size_t>(n), 0);
    dx_.assign(static_cast<std::size_t>(n), 0);
    dy_.assign(static_cast<std::size_t>(n), 0);
    if (augment_ == Augment::FlipCrop) {
        for (int i = 0; i < n; ++i) {
            flip_[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
            dy_[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, 8));
            dx_[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, 8));
        }
    }
    cursor_ = 0;
    epoch_started_ = true;
}

int BatchStream::batches_per_epoch() const {
    return (ds_.size() + batch_size_ - 1) / batch_size_;
}

bool BatchStream::next(Tensor4f& images, std::vector<int>& labels) {
    if (!epoch_started_) throw DataError("BatchStream::next before start_epoch");
    const int n = ds_.size();
    if (cursor_ >= static_cast<std::size_t>(n)) return false;
    const int count = std::min<int>(batch_size_, n - static_cast<int>(cursor_));
    const int c = ds_.images.c();
    const int h = ds_.images.h();
    const int w = ds_.images.w();
    images = Tensor4f(count, c, h, w);
    labels.resize(static_cast<std::size_t>(count));
    for (int b = 0; b < count; ++b) {
        const std::size_t pos = cursor_ + static_cast<std::size_t>(b);
        const int src = order_[pos];
        labels[static_cast<std::size_t>(b)] = ds_.labels[static_cast<std::size_t>(src)];
        if (augment_ == Augment::None) {
            for (int ch = 0; ch < c; ++ch)
                std::memcpy(images.plane(b, ch), ds_.images.plane(src, ch),
                            static_cast<std::size_t>(h) * w * sizeof(float));
            continue;
        }
        // Horizontal flip then crop from a 4-pixel zero border.
        const bool fl = flip_[pos] != 0;
        const int oy = dy_[pos];
        const int ox = dx_[pos];
        for (int ch = 0; ch < c; ++ch) {
            const float* sp = ds_.images.plane(src, ch);
            float* dp = images.plane(b, ch);
            for (int i = 0; i < h; ++i) {
                const int sy = i + oy - 4;
                for (int j = 0; j < w; ++j) {
                    const int sxr = j + ox - 4;
                    const int sx = fl ? (w - 1 - sxr) : sxr;
                    float v = 0.0f;
                    if (sy >= 0 && sy < h && sxr >= 0 && sxr < w) v = sp[sy * w + sx];
                    dp[i * w + j] = v;
                }
            }
        }
    }
    cursor_ += static_cast<std::size_t>(count);
    return true;
}

}  // namespace gctnet
