#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lora3d/checkpoint.hpp"
#include "lora3d/config.hpp"
#include "lora3d/lora.hpp"

namespace lora3d {

// ---------------------------------------------------------------------------
// Architecture presets
// ---------------------------------------------------------------------------

struct StemSpec {
    int kernel = 7;
    int stride = 2;
    int width = 64;
    bool pool = true;   // 3^3 stride-2 max pool after the stem
};

struct StageSpec {
    int blocks;
    int width;       // bottleneck width
    int out_width;   // block output channels (width * expansion)
    int stride;      // applied by the first block of the stage
};

struct BackboneConfig {
    int in_channels = 2;
    StemSpec stem;
    std::vector<StageSpec> stages;

    int feature_dim() const { return stages.back().out_width; }

    // "resnet50-3d": stem 7^3/2 width 64 + pool, stages (3,4,6,3) of
    // bottleneck width (64,128,256,512) with expansion 4.
    // "tiny": stem 3^3/1 width 8 + pool, stages (1,1) of width (8,16) with
    // expansion 2; desk-scale variant for tests.
    static BackboneConfig preset(const std::string& name, int in_channels = 2);
};

// Flattened convolution table of a preset (one row per conv, in build order).
struct ConvSpec {
    std::string name;
    std::size_t d_out, d_in, k;
    int stride;
};
std::vector<ConvSpec> enumerate_convs(const BackboneConfig& cfg);

// ---------------------------------------------------------------------------
// Trainable-parameter registry
// ---------------------------------------------------------------------------

enum class ParamGroupTag { lora, head };

struct ParamRef {
    std::string name;
    Tensor* tensor;
    ParamGroupTag group;
};

using GradMap = std::map<std::string, Tensor>;

// ---------------------------------------------------------------------------
// Network pieces (train-mode forwards cache what their backward needs; a
// model is single-owner during training)
// ---------------------------------------------------------------------------

// Adapted convolution followed by a frozen norm. `two_path` switches the
// forward from the merged-weight route to the explicit frozen-plus-delta
// route (equivalence checks only; backward always uses the merged route).
class ConvNorm {
public:
    std::string name;
    AdaptedConv3d conv;
    FrozenNorm norm;
    bool two_path = false;

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& grad_out, GradMap& grads);

private:
    Tensor x_cache_;
};

class Bottleneck {
public:
    ConvNorm conv1, conv2, conv3;
    std::optional<ConvNorm> down;

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& grad_out, GradMap& grads);

private:
    Tensor a1_cache_, a2_cache_, sum_cache_;
};

class Backbone {
public:
    BackboneConfig cfg;
    ConvNorm stem;
    std::vector<std::vector<Bottleneck>> stages;

    Tensor forward(const Tensor& x, bool train);            // [n, feature_dim]
    Tensor backward(const Tensor& grad_features, GradMap& grads);

private:
    Tensor stem_act_cache_;
    Shape pool_in_shape_;
    MaxPoolResultT<float> pool_cache_;
    Shape gap_in_shape_;
};

// Two-layer classification head: feature_dim -> 128 (GELU, dropout) -> 1.
class MlpHead {
public:
    Linear fc1, fc2;
    double dropout_rate = 0.5;

    Tensor forward(const Tensor& features, bool train, RandomSource* dropout_rng);
    Tensor backward(const Tensor& dlogits, GradMap& grads);

private:
    Tensor x_cache_, h1_cache_, dropped_cache_, mask_cache_;
};

// ---------------------------------------------------------------------------
// End-to-end classifier: frozen backbone + adapters + trainable head
// ---------------------------------------------------------------------------

class AdhdClassifier {
public:
    Backbone backbone;
    MlpHead head;
    ModelSettings settings;

    // Input [n, c, D, H, W], output [n] logits. Train mode needs the dropout
    // stream and arms the caches used by backward().
    Tensor forward_logits(const Tensor& x, bool train, RandomSource* dropout_rng = nullptr);

    // Logistic scores in [0, 1], eval mode.
    std::vector<double> predict_scores(const Tensor& x);

    // Gradients for every trainable parameter, keyed by registry name.
    GradMap backward(const Tensor& dlogits);

    std::vector<ParamRef> trainable();
    std::vector<std::pair<std::string, const Tensor*>> frozen_named() const;

    // Checkpoint interop. Loading copies every matching tensor after a shape
    // check and rejects names the model does not own.
    std::map<std::string, NamedTensor> export_tensors(bool include_backbone) const;
    void load_tensors(const std::map<std::string, NamedTensor>& table);

    // Folds every adapter into its frozen weight and detaches it.
    void merge_adapters();

    // Routes every adapted convolution through the two-path forward.
    void set_two_path_forward(bool enabled);
};

AdhdClassifier build_classifier(const ModelSettings& settings, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

struct CountRow {
    std::string name;
    std::size_t count;
};

struct ParamCountReport {
    std::size_t total = 0;
    std::vector<CountRow> rows;
};

// Registry walk over a built model.
ParamCountReport trainable_param_count(AdhdClassifier& model);

// Symbolic route from the architecture table (no model build); the two must
// agree and the tests hold them to it.
ParamCountReport trainable_param_estimate(const BackboneConfig& cfg, int rank,
                                          const std::vector<std::string>& exclude = {});

struct FlopsReport {
    std::uint64_t macs = 0;
    std::vector<CountRow> rows;   // per-conv MACs
    std::uint64_t flops() const { return 2 * macs; }
};

// Multiply-accumulate count of one forward pass at the given input extents:
// d_out * d_in * k^3 * output-voxels per convolution, plus the head.
FlopsReport flops_estimate(const BackboneConfig& cfg, std::array<std::size_t, 3> extents);

}  // namespace lora3d
