#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "gctnet/network.hpp"

namespace gctnet {

struct CheckpointMeta {
    NetworkSpec spec;
    BuildOptions build;
    nlohmann::json extra;  // free-form payload (standardization stats, config echo)
};

// Single-file format: 8-byte magic, little-endian u64 header length, JSON
// header, then a raw little-endian float32 blob. Transform parameters live
// in the header as flat JSON keyed by full layer name; all other trainable
// parameters and the batch-norm running statistics live in the blob, keyed
// by name through the header's tensor directory.
void save_checkpoint(const std::string& path, Network<float>& net, const NetworkSpec& spec,
                     const BuildOptions& build, const nlohmann::json& extra);

CheckpointMeta read_checkpoint_meta(const std::string& path);

// Rebuilds the network from the stored spec and restores every tensor.
Network<float> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr);

}  // namespace gctnet
