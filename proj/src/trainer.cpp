#include "lora3d/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "lora3d/errors.hpp"
#include "lora3d/optim.hpp"

namespace fs = std::filesystem;

namespace lora3d {

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

Tensor gather_batch(const LoadedDataset& data, const std::vector<std::size_t>& indices,
                    std::size_t begin, std::size_t end) {
    const Tensor& first = data.volumes[indices[begin]];
    Shape shape = first.shape();
    shape.insert(shape.begin(), end - begin);
    Tensor batch(shape);
    const std::size_t stride = first.size();
    for (std::size_t i = begin; i < end; ++i) {
        const Tensor& v = data.volumes[indices[i]];
        std::copy(v.data(), v.data() + stride, batch.data() + (i - begin) * stride);
    }
    return batch;
}

Checkpoint make_checkpoint(AdhdClassifier& model, const RunConfig& cfg, int fold, int epoch,
                           double val_acc, double val_auc) {
    Checkpoint ckpt;
    ckpt.tensors = model.export_tensors(cfg.train.include_backbone);
    ckpt.metadata["preset"] = cfg.model.preset;
    ckpt.metadata["rank"] = std::to_string(cfg.model.rank);
    ckpt.metadata["lora_scale"] = format_double(cfg.model.lora_scale);
    ckpt.metadata["input_channels"] = std::to_string(cfg.model.input_channels);
    ckpt.metadata["input_extents"] = std::to_string(cfg.model.input_extents[0]) + " " +
                                     std::to_string(cfg.model.input_extents[1]) + " " +
                                     std::to_string(cfg.model.input_extents[2]);
    ckpt.metadata["normalize"] = cfg.train.normalize ? "true" : "false";
    ckpt.metadata["threshold"] = format_double(cfg.train.threshold);
    ckpt.metadata["seed"] = std::to_string(cfg.train.seed);
    ckpt.metadata["fold"] = std::to_string(fold);
    ckpt.metadata["epoch"] = std::to_string(epoch);
    ckpt.metadata["val_acc"] = format_double(val_acc);
    ckpt.metadata["val_auc"] = format_double(val_auc);
    ckpt.metadata["config_hash"] = config_hash(cfg);
    ckpt.metadata["include_backbone"] = cfg.train.include_backbone ? "true" : "false";
    return ckpt;
}

}  // namespace

std::size_t LoadedDataset::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == id) return i;
    }
    throw ValueError("subject '" + id + "' not in dataset");
}

LoadedDataset load_dataset(const Manifest& manifest, const RunConfig& cfg) {
    LoadedDataset data;
    data.ids.reserve(manifest.rows.size());
    for (const ManifestRow& row : manifest.rows) {
        Tensor v = load_volume(manifest.volume_path(row));
        if (v.dim(0) != static_cast<std::size_t>(cfg.model.input_channels)) {
            throw ConfigError("volume " + row.path + " has " + std::to_string(v.dim(0)) +
                              " channels, config expects " +
                              std::to_string(cfg.model.input_channels));
        }
        v = resize_trilinear(v, cfg.model.input_extents);
        if (cfg.train.normalize) v = normalize_volume(v);
        data.ids.push_back(row.id);
        data.labels.push_back(row.label);
        data.volumes.push_back(std::move(v));
    }
    return data;
}

std::vector<double> score_subset(AdhdClassifier& model, const LoadedDataset& data,
                                 const std::vector<std::size_t>& indices, int batch_size) {
    std::vector<double> scores;
    scores.reserve(indices.size());
    const std::size_t bs = static_cast<std::size_t>(std::max(batch_size, 1));
    for (std::size_t begin = 0; begin < indices.size(); begin += bs) {
        const std::size_t end = std::min(indices.size(), begin + bs);
        Tensor batch = gather_batch(data, indices, begin, end);
        for (double s : model.predict_scores(batch)) scores.push_back(s);
    }
    return scores;
}

FoldOutcome train_fold(AdhdClassifier& model, const LoadedDataset& data,
                       const std::vector<std::size_t>& train_idx,
                       const std::vector<std::size_t>& val_idx, const RunConfig& cfg, int fold) {
    if (train_idx.empty() || val_idx.empty()) {
        throw ConfigError("train_fold: empty train or validation set");
    }
    const std::uint64_t fold_seed = cfg.train.seed + static_cast<std::uint64_t>(fold);
    RandomSource shuffle_rng(derive_seed(fold_seed, 10));
    RandomSource dropout_rng(derive_seed(fold_seed, 11));

    std::vector<ParamRef> params = model.trainable();
    AdamW opt(default_param_groups(params, cfg.train), cfg.train.beta1, cfg.train.beta2,
              cfg.train.eps);

    std::vector<int> val_labels;
    val_labels.reserve(val_idx.size());
    for (std::size_t i : val_idx) val_labels.push_back(data.labels[i]);

    FoldOutcome out;
    out.fold = fold;
    std::vector<std::size_t> order(train_idx);
    const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
    for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += bs) {
            const std::size_t end = std::min(order.size(), begin + bs);
            Tensor batch = gather_batch(data, order, begin, end);
            std::vector<int> labels;
            labels.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) labels.push_back(data.labels[order[i]]);
            Tensor logits = model.forward_logits(batch, true, &dropout_rng);
            BceBatchResult bce = bce_with_logits_batch(logits, labels);
            loss_sum += bce.loss * static_cast<double>(end - begin);
            GradMap grads = model.backward(bce.dlogits);
            opt.step(params, grads);
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());

        const std::vector<double> scores =
            score_subset(model, data, val_idx, cfg.train.batch_size);
        const double val_acc = accuracy(confusion(scores, val_labels, cfg.train.threshold));
        const double val_auc = auc(roc_curve(scores, val_labels));
        out.log.push_back({epoch, train_loss, val_acc, val_auc});

        if (out.best_acc_epoch == 0 || val_acc > out.best_acc_val_acc) {
            out.best_acc_epoch = epoch;
            out.best_acc_val_acc = val_acc;
            out.best_acc_val_auc = val_auc;
            out.best_acc_ckpt = make_checkpoint(model, cfg, fold, epoch, val_acc, val_auc);
        }
        if (out.best_auc_epoch == 0 || val_auc > out.best_auc_val_auc) {
            out.best_auc_epoch = epoch;
            out.best_auc_val_acc = val_acc;
            out.best_auc_val_auc = val_auc;
            out.best_auc_ckpt = make_checkpoint(model, cfg, fold, epoch, val_acc, val_auc);
        }
    }
    return out;
}

CrossvalOutcome run_crossval(const Manifest& manifest, const RunConfig& cfg, int jobs,
                             const std::function<void(int, AdhdClassifier&)>& fold_hook) {
    CrossvalOutcome outcome;
    outcome.split = stratified_kfold(manifest, cfg.train.folds, cfg.train.seed);
    const LoadedDataset data = load_dataset(manifest, cfg);

    const int k = cfg.train.folds;
    outcome.folds.resize(static_cast<std::size_t>(k));

    // Validation indices per fold; training set is the complement.
    std::vector<std::vector<std::size_t>> val_indices(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        for (const std::string& id : outcome.split.val_folds[static_cast<std::size_t>(f)]) {
            val_indices[static_cast<std::size_t>(f)].push_back(data.index_of(id));
        }
        std::sort(val_indices[static_cast<std::size_t>(f)].begin(),
                  val_indices[static_cast<std::size_t>(f)].end());
    }

    auto run_one = [&](int f) {
        const std::size_t fi = static_cast<std::size_t>(f);
        std::vector<std::size_t> train_idx;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!std::binary_search(val_indices[fi].begin(), val_indices[fi].end(), i)) {
                train_idx.push_back(i);
            }
        }
        AdhdClassifier model = build_classifier(
            cfg.model, cfg.train.seed + static_cast<std::uint64_t>(f));
        outcome.folds[fi] = train_fold(model, data, train_idx, val_indices[fi], cfg, f);
        if (fold_hook) fold_hook(f, model);
    };

    if (jobs <= 1) {
        for (int f = 0; f < k; ++f) run_one(f);
    } else {
        // Folds are isolated jobs (own model, own RNG streams); results land
        // in per-fold slots so the outcome is order-independent.
        std::vector<std::thread> pool;
        for (int f = 0; f < k; ++f) {
            pool.emplace_back(run_one, f);
            if (static_cast<int>(pool.size()) == jobs || f == k - 1) {
                for (auto& t : pool) t.join();
                pool.clear();
            }
        }
    }

    for (const FoldOutcome& f : outcome.folds) {
        outcome.acc_variant_mean_acc += f.best_acc_val_acc;
        outcome.acc_variant_mean_auc += f.best_acc_val_auc;
        outcome.auc_variant_mean_acc += f.best_auc_val_acc;
        outcome.auc_variant_mean_auc += f.best_auc_val_auc;
    }
    outcome.acc_variant_mean_acc /= k;
    outcome.acc_variant_mean_auc /= k;
    outcome.auc_variant_mean_acc /= k;
    outcome.auc_variant_mean_auc /= k;
    outcome.trainable_params =
        trainable_param_estimate(
            BackboneConfig::preset(cfg.model.preset, cfg.model.input_channels), cfg.model.rank,
            cfg.model.adapter_exclude)
            .total;
    return outcome;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_acc,val_auc\n";
    for (const EpochLog& row : log) {
        out += std::to_string(row.epoch) + "," + format_double(row.train_loss) + "," +
               format_double(row.val_acc) + "," + format_double(row.val_auc) + "\n";
    }
    return out;
}

std::string run_report_text(const RunConfig& cfg, const CrossvalOutcome& outcome,
                            double wall_seconds) {
    std::string s;
    s += "[run]\n";
    s += "config_hash = " + config_hash(cfg) + "\n";
    s += "trainable_params = " + std::to_string(outcome.trainable_params) + "\n";
    s += "folds = " + std::to_string(cfg.train.folds) + "\n";
    s += "wall_clock_seconds = " + format_double(wall_seconds) + "\n";
    s += "[config]\n";
    s += serialize_config(cfg);
    for (const FoldOutcome& f : outcome.folds) {
        s += "[fold" + std::to_string(f.fold) + "]\n";
        s += "best_acc_epoch = " + std::to_string(f.best_acc_epoch) + "\n";
        s += "best_acc_val_acc = " + format_double(f.best_acc_val_acc) + "\n";
        s += "best_acc_val_auc = " + format_double(f.best_acc_val_auc) + "\n";
        s += "best_auc_epoch = " + std::to_string(f.best_auc_epoch) + "\n";
        s += "best_auc_val_acc = " + format_double(f.best_auc_val_acc) + "\n";
        s += "best_auc_val_auc = " + format_double(f.best_auc_val_auc) + "\n";
    }
    s += "[mean]\n";
    s += "acc_variant_val_acc = " + format_double(outcome.acc_variant_mean_acc) + "\n";
    s += "acc_variant_val_auc = " + format_double(outcome.acc_variant_mean_auc) + "\n";
    s += "auc_variant_val_acc = " + format_double(outcome.auc_variant_mean_acc) + "\n";
    s += "auc_variant_val_auc = " + format_double(outcome.auc_variant_mean_auc) + "\n";
    return s;
}

void write_crossval_outputs(const std::string& out_dir, const RunConfig& cfg,
                            const Manifest& manifest, const CrossvalOutcome& outcome,
                            double wall_seconds) {
    fs::create_directories(out_dir);
    // Every artifact carries the config hash for provenance checks; text
    // files take it as a leading comment, checkpoints in their metadata.
    const std::string stamp = "# config_hash = " + config_hash(cfg) + "\n";
    write_text((fs::path(out_dir) / "report.txt").string(),
               run_report_text(cfg, outcome, wall_seconds));
    write_text((fs::path(out_dir) / "resolved_config.txt").string(),
               stamp + serialize_config(cfg));
    std::map<std::string, const ManifestRow*> by_id;
    for (const ManifestRow& row : manifest.rows) by_id[row.id] = &row;
    for (const FoldOutcome& f : outcome.folds) {
        const std::string prefix = "fold" + std::to_string(f.fold);
        write_text((fs::path(out_dir) / (prefix + "_log.csv")).string(),
                   stamp + train_log_csv(f.log));
        save_checkpoint((fs::path(out_dir) / (prefix + "_best_acc.l3ck")).string(),
                        f.best_acc_ckpt);
        save_checkpoint((fs::path(out_dir) / (prefix + "_best_auc.l3ck")).string(),
                        f.best_auc_ckpt);
        // Validation manifest with absolute volume paths so it reads the same
        // from any working directory.
        Manifest val;
        for (const std::string& id : outcome.split.val_folds[static_cast<std::size_t>(f.fold)]) {
            const ManifestRow* row = by_id.at(id);
            val.rows.push_back(
                {row->id, row->label, fs::absolute(manifest.volume_path(*row)).string()});
        }
        std::string val_csv = "subject_id,label,path\n";
        for (const auto& row : val.rows) {
            val_csv += row.id + "," + std::to_string(row.label) + "," + row.path + "\n";
        }
        write_text((fs::path(out_dir) / (prefix + "_val_manifest.csv")).string(),
                   stamp + val_csv);
    }
}

}  // namespace lora3d
