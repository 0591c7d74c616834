#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "gctnet/data.hpp"
#include "gctnet/errors.hpp"
#include "test_util.hpp"

using namespace gctnet;

namespace {

std::vector<char> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_all(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("idx loader round trips the synthetic writer") {
    const std::string dir = testutil::scratch_dir("idx");
    testutil::write_idx_dataset(dir + "/im", dir + "/lb", 40, 7);
    Dataset ds = load_mnist(dir + "/im", dir + "/lb");
    CHECK(ds.size() == 40);
    CHECK(ds.images.shape() == Shape4{40, 1, 28, 28});
    CHECK(ds.labels.size() == 40);
    for (int l : ds.labels) {
        CHECK(l >= 0);
        CHECK(l <= 9);
    }
    // pixel scaling to [0,1]
    float mx = 0;
    for (std::int64_t i = 0; i < ds.images.size(); ++i) {
        CHECK(ds.images[i] >= 0.0f);
        CHECK(ds.images[i] <= 1.0f);
        mx = std::max(mx, ds.images[i]);
    }
    CHECK(mx > 0.5f);  // grating crests reach high intensities

    // byte k maps to exactly k/255
    const auto bytes = read_all(dir + "/im");
    const unsigned char b0 = static_cast<unsigned char>(bytes[16]);
    CHECK(ds.images[0] == doctest::Approx(b0 / 255.0f));
}

TEST_CASE("idx loader rejects corrupt files") {
    const std::string dir = testutil::scratch_dir("idx_bad");
    testutil::write_idx_dataset(dir + "/im", dir + "/lb", 10, 8);

    SUBCASE("bad image magic") {
        auto bytes = read_all(dir + "/im");
        bytes[3] = 0x01;
        write_all(dir + "/im2", bytes);
        CHECK_THROWS_AS(load_mnist(dir + "/im2", dir + "/lb"), DataError);
    }
    SUBCASE("bad label magic") {
        auto bytes = read_all(dir + "/lb");
        bytes[3] = 0x09;
        write_all(dir + "/lb2", bytes);
        CHECK_THROWS_AS(load_mnist(dir + "/im", dir + "/lb2"), DataError);
    }
    SUBCASE("truncated image payload") {
        auto bytes = read_all(dir + "/im");
        bytes.resize(bytes.size() - 100);
        write_all(dir + "/im2", bytes);
        CHECK_THROWS_AS(load_mnist(dir + "/im2", dir + "/lb"), DataError);
    }
    SUBCASE("image and label counts disagree") {
        testutil::write_idx_dataset(dir + "/im3", dir + "/lb3", 9, 8);
        CHECK_THROWS_AS(load_mnist(dir + "/im", dir + "/lb3"), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_mnist(dir + "/absent", dir + "/lb"), DataError);
    }
}

TEST_CASE("cifar loader round trips the synthetic writer") {
    const std::string dir = testutil::scratch_dir("cifar");
    testutil::write_cifar_dataset(dir + "/a.bin", 25, 3);
    testutil::write_cifar_dataset(dir + "/b.bin", 15, 4);
    Dataset ds = load_cifar10({dir + "/a.bin", dir + "/b.bin"});
    CHECK(ds.size() == 40);
    CHECK(ds.images.shape() == Shape4{40, 3, 32, 32});

    // first record: label byte then the red plane
    auto bytes = read_all(dir + "/a.bin");
    CHECK(ds.labels[0] == static_cast<int>(bytes[0]));
    const unsigned char r0 = static_cast<unsigned char>(bytes[1]);
    CHECK(ds.images.at(0, 0, 0, 0) == doctest::Approx(r0 / 255.0f));
    // second batch concatenates after the first
    CHECK(ds.labels[25] == static_cast<int>(read_all(dir + "/b.bin")[0]));
}

TEST_CASE("cifar loader rejects ragged files") {
    const std::string dir = testutil::scratch_dir("cifar_bad");
    testutil::write_cifar_dataset(dir + "/a.bin", 5, 3);
    auto bytes = read_all(dir + "/a.bin");
    bytes.resize(bytes.size() - 1);
    write_all(dir + "/a2.bin", bytes);
    CHECK_THROWS_AS(load_cifar10({dir + "/a2.bin"}), DataError);
    CHECK_THROWS_AS(load_cifar10({dir + "/absent.bin"}), DataError);
    CHECK_THROWS_AS(load_cifar10({}), DataError);
}

TEST_CASE("standardization zeroes channel means and is invertible") {
    const std::string dir = testutil::scratch_dir("std");
    testutil::write_cifar_dataset(dir + "/a.bin", 64, 5);
    Dataset ds = load_cifar10({dir + "/a.bin"});
    Dataset orig = ds;

    ChannelStats stats = compute_channel_stats(ds);
    REQUIRE(stats.mean.size() == 3);
    standardize(ds, stats);

    const std::int64_t per_c = static_cast<std::int64_t>(ds.size()) * 32 * 32;
    for (int c = 0; c < 3; ++c) {
        double sum = 0, sumsq = 0;
        for (int n = 0; n < ds.size(); ++n) {
            const float* p = ds.images.plane(n, c);
            for (int i = 0; i < 32 * 32; ++i) {
                sum += p[i];
                sumsq += static_cast<double>(p[i]) * p[i];
            }
        }
        const double mean = sum / static_cast<double>(per_c);
        const double var = sumsq / static_cast<double>(per_c) - mean * mean;
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }

    destandardize(ds, stats);
    CHECK(testutil::max_abs_diff(ds.images.raw(), orig.images.raw()) < 1e-6);
}

TEST_CASE("take slices a contiguous window") {
    const std::string dir = testutil::scratch_dir("take");
    testutil::write_idx_dataset(dir + "/im", dir + "/lb", 20, 9);
    Dataset ds = load_mnist(dir + "/im", dir + "/lb");
    Dataset sub = take(ds, 5, 10);
    CHECK(sub.size() == 10);
    CHECK(sub.labels[0] == ds.labels[5]);
    CHECK(std::memcmp(sub.images.plane(0, 0), ds.images.plane(5, 0),
                      sizeof(float) * 28 * 28) == 0);
    CHECK_THROWS_AS(take(ds, 15, 10), DataError);
    CHECK_THROWS_AS(take(ds, -1, 5), DataError);
}

TEST_CASE("batch stream delivers every sample exactly once per epoch") {
    const std::string dir = testutil::scratch_dir("bs");
    testutil::write_idx_dataset(dir + "/im", dir + "/lb", 23, 10);
    Dataset ds = load_mnist(dir + "/im", dir + "/lb");

    BatchStream stream(ds, 5, 77, Augment::None);
    CHECK(stream.batches_per_epoch() == 5);  // 4 full + 1 of size 3

    stream.start_epoch(0);
    Tensor4f batch;
    std::vector<int> labels;
    std::multiset<float> seen;
    int batches = 0, total = 0, last = 0;
    while (stream.next(batch, labels)) {
        ++batches;
        total += batch.n();
        last = batch.n();
        for (int i = 0; i < batch.n(); ++i) seen.insert(batch.plane(i, 0)[40 * 7 + 9]);
    }
    CHECK(batches == 5);
    CHECK(total == 23);
    CHECK(last == 3);

    std::multiset<float> expect;
    for (int i = 0; i < 23; ++i) expect.insert(ds.images.plane(i, 0)[40 * 7 + 9]);
    CHECK(seen == expect);
}

TEST_CASE("batch stream is reproducible and reshuffles across epochs") {
    const std::string dir = testutil::scratch_dir("bs2");
    testutil::write_idx_dataset(dir + "/im", dir + "/lb", 32, 11);
    Dataset ds = load_mnist(dir + "/im", dir + "/lb");

    auto epoch_labels = [&](std::uint64_t seed, int epoch, Augment aug) {
        BatchStream s(ds, 8, seed, aug);
        s.start_epoch(epoch);
        Tensor4f b;
        std::vector<int> l, all;
        while (s.next(b, l)) all.insert(all.end(), l.begin(), l.end());
        return all;
    };

    CHECK(epoch_labels(1, 0, Augment::None) == epoch_labels(1, 0, Augment::None));
    CHECK(epoch_labels(1, 0, Augment::None) != epoch_labels(1, 1, Augment::None));
    CHECK(epoch_labels(1, 0, Augment::None) != epoch_labels(2, 0, Augment::None));

    // augmented pixel content is reproducible too
    auto epoch_pixels = [&](int epoch) {
        BatchStream s(ds, 8, 5, Augment::FlipCrop);
        s.start_epoch(epoch);
        Tensor4f b;
        std::vector<int> l;
        std::vector<float> px;
        while (s.next(b, l))
            px.insert(px.end(), b.raw().begin(), b.raw().end());
        return px;
    };
    CHECK(testutil::bytes_equal(epoch_pixels(3), epoch_pixels(3)));
    CHECK_FALSE(testutil::bytes_equal(epoch_pixels(3), epoch_pixels(4)));
}

TEST_CASE("without augmentation batches copy source pixels bit for bit") {
    const std::string dir = testutil::scratch_dir("bs3");
    testutil::write_cifar_dataset(dir + "/a.bin", 12, 6);
    Dataset ds = load_cifar10({dir + "/a.bin"});

    // recover the permutation through the labels, then compare planes
    BatchStream s(ds, 4, 9, Augment::None);
    s.start_epoch(0);
    Tensor4f b;
    std::vector<int> l;
    REQUIRE(s.next(b, l));
    bool found_any = false;
    for (int i = 0; i < b.n(); ++i) {
        for (int src = 0; src < ds.size(); ++src) {
            if (ds.labels[src] != l[i]) continue;
            if (std::memcmp(b.plane(i, 0), ds.images.plane(src, 0),
                            sizeof(float) * 3 * 32 * 32) == 0) {
                found_any = true;
                break;
            }
        }
    }
    CHECK(found_any);

    CHECK_THROWS_AS([&] {
        BatchStream s2(ds, 4, 9, Augment::None);
        Tensor4f bb;
        std::vector<int> ll;
        s2.next(bb, ll);  // epoch never started
    }(), DataError);
}

TEST_CASE("flip-crop augmentation keeps values from the padded source") {
    const std::string dir = testutil::scratch_dir("bs4");
    testutil::write_cifar_dataset(dir + "/a.bin", 6, 7);
    Dataset ds = load_cifar10({dir + "/a.bin"});

    BatchStream s(ds, 6, 13, Augment::FlipCrop);
    s.start_epoch(0);
    Tensor4f b;
    std::vector<int> l;
    REQUIRE(s.next(b, l));
    CHECK(b.shape() == Shape4{6, 3, 32, 32});
    // every pixel is either zero (border) or present in the source set
    std::set<float> source;
    for (std::int64_t i = 0; i < ds.images.size(); ++i) source.insert(ds.images[i]);
    for (std::int64_t i = 0; i < b.size(); ++i) {
        const bool ok = b[i] == 0.0f || source.count(b[i]) > 0;
        if (!ok) {
            CAPTURE(b[i]);
            CHECK(ok);
            break;
        }
    }
}

TEST_CASE("augment strings parse both ways") {
    CHECK(augment_from_string("none") == Augment::None);
    CHECK(augment_from_string("flip_crop") == Augment::FlipCrop);
    CHECK(to_string(Augment::FlipCrop) == "flip_crop");
    CHECK_THROWS_AS(augment_from_string("cutout"), ConfigError);
}
