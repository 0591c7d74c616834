#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gctnet/rng.hpp"
#include "gctnet/tensor.hpp"

namespace gctnet {

struct Dataset {
    Tensor4f images;  // (N,C,H,W), [0,1] after loading, standardized in place later
    std::vector<int> labels;
    int class_count = 10;

    int size() const { return images.n(); }
};

// IDX-format images + labels (big-endian headers, magics 0x803 / 0x801).
Dataset load_mnist(const std::string& images_path, const std::string& labels_path);

// Concatenated CIFAR-10 binary batches (3073-byte records).
Dataset load_cifar10(const std::vector<std::string>& batch_paths);

struct ChannelStats {
    std::vector<float> mean;
    std::vector<float> stddev;  // population, floored away from zero
};

ChannelStats compute_channel_stats(const Dataset& ds);
void standardize(Dataset& ds, const ChannelStats& stats);
void destandardize(Dataset& ds, const ChannelStats& stats);

// Contiguous subset [offset, offset+count).
Dataset take(const Dataset& ds, int offset, int count);

enum class Augment { None, FlipCrop };

std::string to_string(Augment a);
Augment augment_from_string(const std::string& s);

// Deterministic shuffled batch iterator. Each epoch draws a fresh
// permutation and per-sample augmentation decisions from (seed, epoch), so
// delivery is reproducible no matter how the batches are consumed.
class BatchStream {
  public:
    BatchStream(const Dataset& ds, int batch_size, std::uint64_t seed, Augment augment);

    void start_epoch(int epoch);
    // Fills the next batch; returns false once the epoch is exhausted. The
    // final batch may be smaller than batch_size.
    bool next(Tensor4f& images, std::vector<int>& labels);

    int batches_per_epoch() const;
    int batch_size() const { return batch_size_; }

  private:
    const Dataset& ds_;
    int batch_size_;
    std::uint64_t seed_;
    Augment augment_;
    std::vector<int> order_;
    std::vector<unsigned char> flip_;
    std::vector<int> dx_, dy_;
    std::size_t cursor_ = 0;
    bool epoch_started_ = false;
};

}  // namespace gctnet
