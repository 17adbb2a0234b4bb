#include "lora3d/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lora3d/errors.hpp"

namespace lora3d {

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

BackboneConfig BackboneConfig::preset(const std::string& name, int in_channels) {
    BackboneConfig cfg;
    cfg.in_channels = in_channels;
    if (name == "resnet50-3d") {
        cfg.stem = {7, 2, 64, true};
        cfg.stages = {{3, 64, 256, 1}, {4, 128, 512, 2}, {6, 256, 1024, 2}, {3, 512, 2048, 2}};
    } else if (name == "tiny") {
        cfg.stem = {3, 1, 8, true};
        cfg.stages = {{1, 8, 16, 1}, {1, 16, 32, 2}};
    } else {
        throw ValueError("unknown backbone preset '" + name + "'");
    }
    return cfg;
}

std::vector<ConvSpec> enumerate_convs(const BackboneConfig& cfg) {
    std::vector<ConvSpec> convs;
    convs.push_back({"backbone.stem", static_cast<std::size_t>(cfg.stem.width),
                     static_cast<std::size_t>(cfg.in_channels),
                     static_cast<std::size_t>(cfg.stem.kernel), cfg.stem.stride});
    int in_width = cfg.stem.width;
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageSpec& stage = cfg.stages[s];
        for (int b = 0; b < stage.blocks; ++b) {
            const std::string base =
                "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
            const int stride = (b == 0) ? stage.stride : 1;
            convs.push_back({base + "conv1", static_cast<std::size_t>(stage.width),
                             static_cast<std::size_t>(in_width), 1, 1});
            convs.push_back({base + "conv2", static_cast<std::size_t>(stage.width),
                             static_cast<std::size_t>(stage.width), 3, stride});
            convs.push_back({base + "conv3", static_cast<std::size_t>(stage.out_width),
                             static_cast<std::size_t>(stage.width), 1, 1});
            if (b == 0 && (stride != 1 || in_width != stage.out_width)) {
                convs.push_back({base + "down", static_cast<std::size_t>(stage.out_width),
                                 static_cast<std::size_t>(in_width), 1, stride});
            }
            in_width = stage.out_width;
        }
    }
    return convs;
}

// ---------------------------------------------------------------------------
// ConvNorm
// ---------------------------------------------------------------------------

Tensor ConvNorm::forward(const Tensor& x, bool train) {
    if (train) x_cache_ = x;
    Tensor y = two_path ? adapted_forward_two_path(conv, x) : adapted_forward(conv, x);
    return frozen_norm_forward(norm, y);
}

Tensor ConvNorm::backward(const Tensor& grad_out, GradMap& grads) {
    Tensor g = frozen_norm_backward(norm, grad_out);
    AdaptedGradsT<float> ag = adapter_backward(conv, x_cache_, g);
    if (conv.adapter) {
        grads[name + ".lora_A"] = std::move(ag.dA);
        grads[name + ".lora_B"] = std::move(ag.dB);
    }
    return std::move(ag.dinput);
}

// ---------------------------------------------------------------------------
// Bottleneck
// ---------------------------------------------------------------------------

Tensor Bottleneck::forward(const Tensor& x, bool train) {
    Tensor a1 = conv1.forward(x, train);
    if (train) a1_cache_ = a1;
    Tensor a2 = conv2.forward(relu_forward(a1), train);
    if (train) a2_cache_ = a2;
    Tensor a3 = conv3.forward(relu_forward(a2), train);
    Tensor shortcut = down ? down->forward(x, train) : x;
    Tensor s = add(a3, shortcut);
    if (train) sum_cache_ = s;
    return relu_forward(s);
}

Tensor Bottleneck::backward(const Tensor& grad_out, GradMap& grads) {
    Tensor gs = relu_backward(sum_cache_, grad_out);
    Tensor g = conv3.backward(gs, grads);
    g = conv2.backward(relu_backward(a2_cache_, g), grads);
    g = conv1.backward(relu_backward(a1_cache_, g), grads);
    Tensor g_short = down ? down->backward(gs, grads) : gs;
    return add(g, g_short);
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

Tensor Backbone::forward(const Tensor& x, bool train) {
    Tensor h = stem.forward(x, train);
    if (train) stem_act_cache_ = h;
    h = relu_forward(h);
    if (cfg.stem.pool) {
        pool_in_shape_ = h.shape();
        MaxPoolResultT<float> pooled = maxpool3d_forward(h, 3, 2, 1);
        h = pooled.output;
        if (train) pool_cache_ = std::move(pooled);
    }
    for (auto& stage : stages)
        for (auto& block : stage) h = block.forward(h, train);
    gap_in_shape_ = h.shape();
    return global_avg_pool_forward(h);
}

Tensor Backbone::backward(const Tensor& grad_features, GradMap& grads) {
    Tensor g = global_avg_pool_backward(gap_in_shape_, grad_features);
    for (auto stage = stages.rbegin(); stage != stages.rend(); ++stage)
        for (auto block = stage->rbegin(); block != stage->rend(); ++block)
            g = block->backward(g, grads);
    if (cfg.stem.pool) {
        g = maxpool3d_backward(pool_cache_, pool_in_shape_, g);
    }
    g = relu_backward(stem_act_cache_, g);
    return stem.backward(g, grads);
}

// ---------------------------------------------------------------------------
// MlpHead
// ---------------------------------------------------------------------------

Tensor MlpHead::forward(const Tensor& features, bool train, RandomSource* dropout_rng) {
    if (train && dropout_rng == nullptr) {
        throw ValueError("train-mode head forward needs a dropout random source");
    }
    if (train) x_cache_ = features;
    Tensor h1 = linear_forward(fc1, features);
    if (train) h1_cache_ = h1;
    Tensor g1 = gelu_forward(h1);
    Tensor dropped;
    if (train) {
        DropoutResultT<float> d = dropout_forward(g1, dropout_rate, true, *dropout_rng);
        mask_cache_ = std::move(d.mask);
        dropped = std::move(d.output);
        dropped_cache_ = dropped;
    } else {
        dropped = std::move(g1);
    }
    Tensor logits = linear_forward(fc2, dropped);
    return logits.reshape({logits.dim(0)});
}

Tensor MlpHead::backward(const Tensor& dlogits, GradMap& grads) {
    const std::size_t n = dlogits.dim(0);
    LinearGradsT<float> g2 = linear_backward(fc2, dropped_cache_, dlogits.reshape({n, 1}));
    grads["head.fc2.weight"] = std::move(g2.dweight);
    grads["head.fc2.bias"] = std::move(g2.dbias);
    Tensor gd = dropout_backward(mask_cache_, g2.dinput);
    Tensor gh = gelu_backward(h1_cache_, gd);
    LinearGradsT<float> g1 = linear_backward(fc1, x_cache_, gh);
    grads["head.fc1.weight"] = std::move(g1.dweight);
    grads["head.fc1.bias"] = std::move(g1.dbias);
    return std::move(g1.dinput);
}

// ---------------------------------------------------------------------------
// AdhdClassifier
// ---------------------------------------------------------------------------

Tensor AdhdClassifier::forward_logits(const Tensor& x, bool train, RandomSource* dropout_rng) {
    Tensor features = backbone.forward(x, train);
    return head.forward(features, train, dropout_rng);
}

std::vector<double> AdhdClassifier::predict_scores(const Tensor& x) {
    Tensor logits = forward_logits(x, false);
    std::vector<double> scores(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = static_cast<double>(logits[i]);
        // Logistic in the overflow-safe branch form.
        scores[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                             : std::exp(z) / (1.0 + std::exp(z));
    }
    return scores;
}

GradMap AdhdClassifier::backward(const Tensor& dlogits) {
    GradMap grads;
    Tensor gfeat = head.backward(dlogits, grads);
    backbone.backward(gfeat, grads);
    return grads;
}

namespace {

template <typename Fn>
void visit_convnorms(Backbone& backbone, Fn&& fn) {
    fn(backbone.stem);
    for (auto& stage : backbone.stages)
        for (auto& block : stage) {
            fn(block.conv1);
            fn(block.conv2);
            fn(block.conv3);
            if (block.down) fn(*block.down);
        }
}

template <typename Fn>
void visit_convnorms_const(const Backbone& backbone, Fn&& fn) {
    fn(backbone.stem);
    for (const auto& stage : backbone.stages)
        for (const auto& block : stage) {
            fn(block.conv1);
            fn(block.conv2);
            fn(block.conv3);
            if (block.down) fn(*block.down);
        }
}

}  // namespace

std::vector<ParamRef> AdhdClassifier::trainable() {
    std::vector<ParamRef> refs;
    visit_convnorms(backbone, [&](ConvNorm& cn) {
        if (cn.conv.adapter) {
            refs.push_back({cn.name + ".lora_A", &cn.conv.adapter->A, ParamGroupTag::lora});
            refs.push_back({cn.name + ".lora_B", &cn.conv.adapter->B, ParamGroupTag::lora});
        }
    });
    refs.push_back({"head.fc1.weight", &head.fc1.weight, ParamGroupTag::head});
    refs.push_back({"head.fc1.bias", &head.fc1.bias, ParamGroupTag::head});
    refs.push_back({"head.fc2.weight", &head.fc2.weight, ParamGroupTag::head});
    refs.push_back({"head.fc2.bias", &head.fc2.bias, ParamGroupTag::head});
    return refs;
}

std::vector<std::pair<std::string, const Tensor*>> AdhdClassifier::frozen_named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit_convnorms_const(backbone, [&](const ConvNorm& cn) {
        out.emplace_back(cn.name + ".weight", &cn.conv.frozen.weight);
        if (cn.conv.frozen.bias) out.emplace_back(cn.name + ".bias", &*cn.conv.frozen.bias);
        out.emplace_back(cn.name + ".norm.scale", &cn.norm.scale);
        out.emplace_back(cn.name + ".norm.shift", &cn.norm.shift);
        out.emplace_back(cn.name + ".norm.mean", &cn.norm.mean);
        out.emplace_back(cn.name + ".norm.var", &cn.norm.var);
    });
    return out;
}

std::map<std::string, NamedTensor> AdhdClassifier::export_tensors(bool include_backbone) const {
    std::map<std::string, NamedTensor> table;
    auto* self = const_cast<AdhdClassifier*>(this);
    for (const ParamRef& p : self->trainable()) table[p.name] = NamedTensor::from(*p.tensor);
    if (include_backbone) {
        for (const auto& [name, tensor] : frozen_named()) {
            table[name] = NamedTensor::from(*tensor);
        }
    }
    return table;
}

void AdhdClassifier::load_tensors(const std::map<std::string, NamedTensor>& table) {
    std::map<std::string, Tensor*> dest;
    for (const ParamRef& p : trainable()) dest[p.name] = p.tensor;
    visit_convnorms(backbone, [&](ConvNorm& cn) {
        dest[cn.name + ".weight"] = &cn.conv.frozen.weight;
        if (cn.conv.frozen.bias) dest[cn.name + ".bias"] = &*cn.conv.frozen.bias;
        dest[cn.name + ".norm.scale"] = &cn.norm.scale;
        dest[cn.name + ".norm.shift"] = &cn.norm.shift;
        dest[cn.name + ".norm.mean"] = &cn.norm.mean;
        dest[cn.name + ".norm.var"] = &cn.norm.var;
    });
    for (const auto& [name, src] : table) {
        auto it = dest.find(name);
        if (it == dest.end()) {
            throw FormatError("checkpoint tensor '" + name + "' has no slot in this model", 0);
        }
        Tensor& dst = *it->second;
        Shape shape(src.extents.begin(), src.extents.end());
        if (shape != dst.shape()) {
            throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                                  ", model expects " + shape_str(dst.shape()),
                              0);
        }
        if (src.dtype != DType::f32) {
            throw FormatError("checkpoint tensor '" + name + "' is not 32-bit float", 0);
        }
        std::memcpy(dst.data(), src.raw.data(), src.raw.size());
    }
}

void AdhdClassifier::merge_adapters() {
    visit_convnorms(backbone, [](ConvNorm& cn) {
        if (cn.conv.adapter) {
            cn.conv.frozen = merge(cn.conv);
            cn.conv.adapter.reset();
        }
    });
}

void AdhdClassifier::set_two_path_forward(bool enabled) {
    visit_convnorms(backbone, [enabled](ConvNorm& cn) { cn.two_path = enabled; });
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

FrozenNorm make_norm(std::size_t channels, RandomSource& rng) {
    FrozenNorm norm;
    norm.scale = Tensor({channels});
    norm.shift = Tensor({channels});
    norm.mean = Tensor({channels});
    norm.var = Tensor({channels});
    // Near-identity statistics with a seeded wobble: keeps activations stable
    // while making accidental-overwrite bugs detectable.
    for (std::size_t c = 0; c < channels; ++c) {
        norm.scale[c] = 1.0f + 0.05f * static_cast<float>(rng.gaussian());
        norm.shift[c] = 0.05f * static_cast<float>(rng.gaussian());
        norm.mean[c] = 0.02f * static_cast<float>(rng.gaussian());
        norm.var[c] = 1.0f + 0.05f * std::abs(static_cast<float>(rng.gaussian()));
    }
    return norm;
}

ConvNorm make_convnorm(const ConvSpec& spec, std::array<int, 3> stride, std::array<int, 3> pad,
                       RandomSource& backbone_rng) {
    ConvNorm cn;
    cn.name = spec.name;
    cn.conv.frozen.weight = Tensor({spec.d_out, spec.d_in, spec.k, spec.k, spec.k});
    const double fan_in = static_cast<double>(spec.d_in * spec.k * spec.k * spec.k);
    gaussian_fill(cn.conv.frozen.weight, backbone_rng, 0.0, std::sqrt(2.0 / fan_in));
    // Backbone convolutions carry no bias; the norm supplies the shift.
    cn.conv.frozen.stride = stride;
    cn.conv.frozen.padding = pad;
    cn.norm = make_norm(spec.d_out, backbone_rng);
    return cn;
}

void attach_adapter(ConvNorm& cn, int rank, float scale,
                    const std::vector<std::string>& exclude, RandomSource& adapter_rng) {
    if (rank <= 0) return;
    if (std::find(exclude.begin(), exclude.end(), cn.name) != exclude.end()) return;
    cn.conv.adapter = init_adapter<float>(
        cn.conv.frozen.weight.dim(0), cn.conv.frozen.weight.dim(1),
        cn.conv.frozen.weight.dim(2), static_cast<std::size_t>(rank), adapter_rng, scale);
}

Linear make_linear(std::size_t out, std::size_t in, RandomSource& rng) {
    Linear l;
    l.weight = Tensor({out, in});
    gaussian_fill(l.weight, rng, 0.0, std::sqrt(2.0 / static_cast<double>(in)));
    l.bias = Tensor::zeros({out});
    return l;
}

}  // namespace

AdhdClassifier build_classifier(const ModelSettings& settings, std::uint64_t seed) {
    if (settings.rank < 0) throw ValueError("rank must be >= 0");
    const BackboneConfig cfg = BackboneConfig::preset(settings.preset, settings.input_channels);

    RandomSource backbone_rng(derive_seed(seed, 1));
    RandomSource adapter_rng(derive_seed(seed, 2));
    RandomSource head_rng(derive_seed(seed, 3));

    AdhdClassifier model;
    model.settings = settings;
    model.backbone.cfg = cfg;

    const std::vector<ConvSpec> convs = enumerate_convs(cfg);
    std::size_t ci = 0;
    auto next_spec = [&]() -> const ConvSpec& { return convs[ci++]; };

    {
        const ConvSpec& spec = next_spec();
        const int pad = cfg.stem.kernel / 2;
        model.backbone.stem =
            make_convnorm(spec, {cfg.stem.stride, cfg.stem.stride, cfg.stem.stride},
                          {pad, pad, pad}, backbone_rng);
    }
    for (const StageSpec& stage : cfg.stages) {
        std::vector<Bottleneck> blocks;
        for (int b = 0; b < stage.blocks; ++b) {
            const int stride = (b == 0) ? stage.stride : 1;
            Bottleneck block;
            block.conv1 = make_convnorm(next_spec(), {1, 1, 1}, {0, 0, 0}, backbone_rng);
            block.conv2 = make_convnorm(next_spec(), {stride, stride, stride}, {1, 1, 1},
                                        backbone_rng);
            block.conv3 = make_convnorm(next_spec(), {1, 1, 1}, {0, 0, 0}, backbone_rng);
            if (ci < convs.size() && convs[ci].name.ends_with(".down")) {
                block.down = make_convnorm(next_spec(), {stride, stride, stride}, {0, 0, 0},
                                           backbone_rng);
            }
            blocks.push_back(std::move(block));
        }
        model.backbone.stages.push_back(std::move(blocks));
    }

    visit_convnorms(model.backbone, [&](ConvNorm& cn) {
        attach_adapter(cn, settings.rank, settings.lora_scale, settings.adapter_exclude,
                       adapter_rng);
    });

    const std::size_t feat = static_cast<std::size_t>(cfg.feature_dim());
    model.head.fc1 = make_linear(128, feat, head_rng);
    model.head.fc2 = make_linear(1, 128, head_rng);

    if (!settings.backbone_weights.empty()) {
        const Checkpoint ckpt = load_checkpoint(settings.backbone_weights);
        model.load_tensors(ckpt.tensors);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

ParamCountReport trainable_param_count(AdhdClassifier& model) {
    ParamCountReport report;
    for (const ParamRef& p : model.trainable()) {
        report.rows.push_back({p.name, p.tensor->size()});
        report.total += p.tensor->size();
    }
    return report;
}

ParamCountReport trainable_param_estimate(const BackboneConfig& cfg, int rank,
                                          const std::vector<std::string>& exclude) {
    ParamCountReport report;
    if (rank > 0) {
        for (const ConvSpec& c : enumerate_convs(cfg)) {
            if (std::find(exclude.begin(), exclude.end(), c.name) != exclude.end()) continue;
            const std::size_t n =
                lora_param_count(c.d_out, c.d_in, c.k, static_cast<std::size_t>(rank));
            report.rows.push_back({c.name + ".lora", n});
            report.total += n;
        }
    }
    const std::size_t feat = static_cast<std::size_t>(cfg.feature_dim());
    const std::size_t head = feat * 128 + 128 + 128 * 1 + 1;
    report.rows.push_back({"head", head});
    report.total += head;
    return report;
}

FlopsReport flops_estimate(const BackboneConfig& cfg, std::array<std::size_t, 3> extents) {
    auto conv_out = [](std::size_t in, int k, int stride, int pad) -> std::size_t {
        const std::ptrdiff_t span =
            static_cast<std::ptrdiff_t>(in) + 2 * pad - static_cast<std::ptrdiff_t>(k);
        if (span < 0) throw ShapeError("flops_estimate: input extents too small for the preset");
        return static_cast<std::size_t>(span / stride) + 1;
    };
    auto apply = [&](std::array<std::size_t, 3>& e, int k, int stride, int pad) {
        for (auto& x : e) x = conv_out(x, k, stride, pad);
    };

    FlopsReport report;
    std::array<std::size_t, 3> e = extents;
    auto add_conv = [&](const std::string& name, std::size_t d_out, std::size_t d_in,
                        std::size_t k, const std::array<std::size_t, 3>& out) {
        const std::uint64_t macs = static_cast<std::uint64_t>(d_out) * d_in * k * k * k *
                                   out[0] * out[1] * out[2];
        report.rows.push_back({name, macs});
        report.macs += macs;
    };

    apply(e, cfg.stem.kernel, cfg.stem.stride, cfg.stem.kernel / 2);
    add_conv("backbone.stem", static_cast<std::size_t>(cfg.stem.width),
             static_cast<std::size_t>(cfg.in_channels),
             static_cast<std::size_t>(cfg.stem.kernel), e);
    if (cfg.stem.pool) apply(e, 3, 2, 1);

    std::size_t in_width = static_cast<std::size_t>(cfg.stem.width);
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageSpec& stage = cfg.stages[s];
        for (int b = 0; b < stage.blocks; ++b) {
            const std::string base =
                "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
            const int stride = (b == 0) ? stage.stride : 1;
            add_conv(base + "conv1", static_cast<std::size_t>(stage.width), in_width, 1, e);
            std::array<std::size_t, 3> e2 = e;
            apply(e2, 3, stride, 1);
            add_conv(base + "conv2", static_cast<std::size_t>(stage.width),
                     static_cast<std::size_t>(stage.width), 3, e2);
            add_conv(base + "conv3", static_cast<std::size_t>(stage.out_width),
                     static_cast<std::size_t>(stage.width), 1, e2);
            if (b == 0 && (stride != 1 || in_width != static_cast<std::size_t>(stage.out_width))) {
                add_conv(base + "down", static_cast<std::size_t>(stage.out_width), in_width, 1,
                         e2);
            }
            e = e2;
            in_width = static_cast<std::size_t>(stage.out_width);
        }
    }
    const std::uint64_t head_macs = static_cast<std::uint64_t>(cfg.feature_dim()) * 128 + 128;
    report.rows.push_back({"head", head_macs});
    report.macs += head_macs;
    return report;
}

}  // namespace lora3d
