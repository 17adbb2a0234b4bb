// Command-line entry points: crossval, eval, count-params, flops,
// merge-lora, gen-synth. Exit codes: 0 success, 1 runtime failure,
// 2 usage or configuration error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lora3d/checkpoint.hpp"
#include "lora3d/config.hpp"
#include "lora3d/data.hpp"
#include "lora3d/errors.hpp"
#include "lora3d/metrics.hpp"
#include "lora3d/model.hpp"
#include "lora3d/optim.hpp"
#include "lora3d/trainer.hpp"

namespace fs = std::filesystem;
using namespace lora3d;

namespace {

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) {
        throw ConfigError(std::string(what) + " not found: " + path);
    }
}

// Rebuilds the model a checkpoint was trained with from its metadata and
// loads the stored tensors onto it.
struct RestoredModel {
    AdhdClassifier model;
    RunConfig cfg;
};

RestoredModel restore_from_checkpoint(const Checkpoint& ckpt) {
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = ckpt.metadata.find(key);
        if (it == ckpt.metadata.end()) {
            throw ConfigError("checkpoint metadata missing '" + key + "'");
        }
        return it->second;
    };
    RunConfig cfg;
    cfg.model.preset = need("preset");
    cfg.model.rank = std::stoi(need("rank"));
    cfg.model.lora_scale = std::stof(need("lora_scale"));
    cfg.model.input_channels = std::stoi(need("input_channels"));
    {
        std::istringstream in(need("input_extents"));
        std::size_t d = 0, h = 0, w = 0;
        if (!(in >> d >> h >> w)) throw ConfigError("bad input_extents in checkpoint metadata");
        cfg.model.input_extents = {d, h, w};
    }
    cfg.train.normalize = need("normalize") == "true";
    cfg.train.threshold = std::stod(need("threshold"));
    cfg.train.seed = std::stoull(need("seed"));
    const int fold = std::stoi(need("fold"));

    RestoredModel out{
        build_classifier(cfg.model, cfg.train.seed + static_cast<std::uint64_t>(fold)), cfg};
    out.model.load_tensors(ckpt.tensors);
    return out;
}

int cmd_crossval(const std::string& config_path, const std::string& manifest_path,
                 const std::string& out_dir, int jobs) {
    require_file(config_path, "config");
    require_file(manifest_path, "manifest");
    const RunConfig cfg = load_config(config_path);
    const Manifest manifest = load_manifest(manifest_path);
    const auto start = std::chrono::steady_clock::now();
    const CrossvalOutcome outcome = run_crossval(manifest, cfg, jobs);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_crossval_outputs(out_dir, cfg, manifest, outcome, wall);
    std::cout << run_report_text(cfg, outcome, wall);
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path, double threshold,
             bool threshold_set, const std::string& roc_path) {
    require_file(ckpt_path, "checkpoint");
    require_file(manifest_path, "manifest");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    RestoredModel restored = restore_from_checkpoint(ckpt);
    if (threshold_set) restored.cfg.train.threshold = threshold;

    const Manifest manifest = load_manifest(manifest_path);
    const LoadedDataset data = load_dataset(manifest, restored.cfg);
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const std::vector<double> scores = score_subset(restored.model, data, all, 8);

    const ConfusionMatrix cm = confusion(scores, data.labels, restored.cfg.train.threshold);
    const RocCurve curve = roc_curve(scores, data.labels);
    std::cout << "samples = " << data.size() << "\n";
    std::cout << "threshold = " << format_double(restored.cfg.train.threshold) << "\n";
    std::cout << "confusion tp = " << cm.tp << ", fp = " << cm.fp << ", tn = " << cm.tn
              << ", fn = " << cm.fn << "\n";
    std::cout << "accuracy = " << format_double(accuracy(cm)) << "\n";
    std::cout << "auc = " << format_double(auc(curve)) << "\n";
    if (!roc_path.empty()) {
        std::ofstream out(roc_path, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + roc_path);
        const auto hash = ckpt.metadata.find("config_hash");
        if (hash != ckpt.metadata.end()) {
            out << "# config_hash = " << hash->second << "\n";
        }
        out << roc_csv(curve);
    }
    return 0;
}

int cmd_count_params(const std::string& preset, int rank, int channels, bool breakdown) {
    const BackboneConfig cfg = BackboneConfig::preset(preset, channels);
    const ParamCountReport report = trainable_param_estimate(cfg, rank);
    if (breakdown) {
        for (const CountRow& row : report.rows) {
            std::printf("%-40s %12zu\n", row.name.c_str(), row.count);
        }
    }
    std::printf("total_trainable = %zu\n", report.total);
    std::printf("total_trainable_millions = %.6f\n",
                static_cast<double>(report.total) / 1e6);
    return 0;
}

int cmd_flops(const std::string& preset, int channels, std::vector<std::size_t> extents,
              bool breakdown) {
    const BackboneConfig cfg = BackboneConfig::preset(preset, channels);
    if (extents.empty()) extents = {128, 128, 128};
    if (extents.size() == 1) extents = {extents[0], extents[0], extents[0]};
    if (extents.size() != 3) throw ConfigError("--extents needs one or three values");
    const FlopsReport report = flops_estimate(cfg, {extents[0], extents[1], extents[2]});
    if (breakdown) {
        for (const CountRow& row : report.rows) {
            std::printf("%-40s %16zu\n", row.name.c_str(), row.count);
        }
    }
    std::printf("macs = %llu\n", static_cast<unsigned long long>(report.macs));
    std::printf("flops_2x_macs = %llu\n", static_cast<unsigned long long>(report.flops()));
    std::printf("macs_tera = %.6f\n", static_cast<double>(report.macs) / 1e12);
    std::printf("flops_tera = %.6f\n", static_cast<double>(report.flops()) / 1e12);
    return 0;
}

int cmd_merge_lora(const std::string& in_path, const std::string& out_path) {
    require_file(in_path, "checkpoint");
    const Checkpoint ckpt = load_checkpoint(in_path);
    RestoredModel restored = restore_from_checkpoint(ckpt);
    restored.model.merge_adapters();

    Checkpoint merged;
    merged.metadata = ckpt.metadata;
    merged.metadata["rank"] = "0";
    merged.metadata["include_backbone"] = "true";
    merged.metadata["merged_from_rank"] = ckpt.metadata.count("rank")
                                              ? ckpt.metadata.at("rank")
                                              : std::string("0");
    merged.tensors = restored.model.export_tensors(true);
    save_checkpoint(out_path, merged);
    std::cout << "merged checkpoint written to " << out_path << "\n";
    return 0;
}

int cmd_gen_synth(const std::string& out_dir, int n, std::vector<std::size_t> extents,
                  std::uint64_t seed, double separation) {
    if (extents.empty()) extents = {16, 16, 16};
    if (extents.size() == 1) extents = {extents[0], extents[0], extents[0]};
    if (extents.size() != 3) throw ConfigError("--extents needs one or three values");
    SynthConfig cfg;
    cfg.n_per_class = n;
    cfg.extents = {extents[0], extents[1], extents[2]};
    cfg.seed = seed;
    cfg.separation = separation;
    const Manifest manifest = synth_generate(out_dir, cfg);
    std::cout << "wrote " << manifest.rows.size() << " volumes under " << out_dir << "\n";
    std::cout << "manifest: " << (fs::path(out_dir) / "manifest.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LoRA fine-tuning for 3D convolutional ADHD classification"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, out_dir, ckpt_path, roc_path, in_path, out_path;
    std::string preset = "resnet50-3d";
    int jobs = 1, rank = 4, channels = 2, n = 50;
    double threshold = 0.5, separation = 2.0;
    std::uint64_t seed = 42;
    std::vector<std::size_t> extents;
    bool breakdown = false;

    auto* crossval = app.add_subcommand("crossval", "stratified k-fold training run");
    crossval->add_option("--config", config_path, "run configuration file")->required();
    crossval->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();
    crossval->add_option("--out", out_dir, "output directory")->required();
    crossval->add_option("--jobs", jobs, "parallel fold jobs (default 1)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();
    auto* thr_opt = eval->add_option("--threshold", threshold, "decision threshold");
    eval->add_option("--roc-out", roc_path, "write ROC CSV here");

    auto* count = app.add_subcommand("count-params", "trainable parameter accounting");
    count->add_option("--preset", preset, "backbone preset");
    count->add_option("--rank", rank, "adapter rank");
    count->add_option("--channels", channels, "input channels");
    count->add_flag("--breakdown", breakdown, "per-layer rows");

    auto* flops = app.add_subcommand("flops", "forward-pass MAC/FLOP estimate");
    flops->add_option("--preset", preset, "backbone preset");
    flops->add_option("--channels", channels, "input channels");
    flops->add_option("--extents", extents, "input extents (1 or 3 values)");
    flops->add_flag("--breakdown", breakdown, "per-layer rows");

    auto* merge = app.add_subcommand("merge-lora", "fold adapters into the backbone");
    merge->add_option("--checkpoint", in_path, "input checkpoint")->required();
    merge->add_option("--out", out_path, "merged checkpoint path")->required();

    auto* synth = app.add_subcommand("gen-synth", "generate a synthetic two-class dataset");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--n", n, "volumes per class");
    synth->add_option("--extents", extents, "volume extents (1 or 3 values)");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--separation", separation, "class separation (0 = identical)");

    try {
        app.parse(argc, argv);
        if (crossval->parsed()) return cmd_crossval(config_path, manifest_path, out_dir, jobs);
        if (eval->parsed()) {
            return cmd_eval(ckpt_path, manifest_path, threshold, thr_opt->count() > 0, roc_path);
        }
        if (count->parsed()) return cmd_count_params(preset, rank, channels, breakdown);
        if (flops->parsed()) return cmd_flops(preset, channels, extents, breakdown);
        if (merge->parsed()) return cmd_merge_lora(in_path, out_path);
        if (synth->parsed()) return cmd_gen_synth(out_dir, n, extents, seed, separation);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const ValueError& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
