#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace lora3d {

// Run configuration, a key-value file with [model] and [train] sections.
// Unset keys keep the defaults below.
struct ModelSettings {
    std::string preset = "resnet50-3d";            // or "tiny"
    int rank = 4;                                  // 0 disables adapters
    float lora_scale = 1.0f;
    int input_channels = 2;                        // FA, MD
    std::array<std::size_t, 3> input_extents{128, 128, 128};
    std::string backbone_weights;                  // optional checkpoint path
    std::vector<std::string> adapter_exclude;      // conv names without adapters
};

struct TrainSettings {
    int epochs = 100;
    int batch_size = 4;
    std::uint64_t seed = 42;
    int folds = 5;
    double lr_lora = 1e-4;
    double lr_head = 1e-5;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double dropout = 0.5;
    bool normalize = true;
    double threshold = 0.5;
    bool include_backbone = false;   // store backbone tensors in checkpoints
};

struct RunConfig {
    ModelSettings model;
    TrainSettings train;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical serialization: fixed key order, full-precision numbers. Equal
// configs serialize to identical bytes.
std::string serialize_config(const RunConfig& cfg);

// FNV-1a 64 over the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

std::string format_double(double v);

}  // namespace lora3d
