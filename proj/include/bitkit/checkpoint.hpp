#pragma once

// BITC checkpoint container: magic "BITC", u32 version, then repeated
// records of (u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
// little-endian f32 payload). Round-trips are bit-exact.
//
// Conventions layered on top of the container:
//   meta/model_config   encoded ModelConfig, written by save_model
//   optim/...           optimizer state (momentum buffers, step, snapshot)

#include <string>

#include "bitkit/layers.hpp"

namespace bitkit {

void save_checkpoint(const std::string& path, const Params<float>& tensors);
Params<float> load_checkpoint(const std::string& path);

struct LoadedModel {
    ModelConfig config;
    Params<float> params;
};

// Model checkpoint with the config embedded as a meta record.
void save_model(const std::string& path, const ModelConfig& config, const Params<float>& params);
LoadedModel load_model(const std::string& path);

Tensor<float> encode_model_config(const ModelConfig& config);
ModelConfig decode_model_config(const Tensor<float>& t);

}  // namespace bitkit
