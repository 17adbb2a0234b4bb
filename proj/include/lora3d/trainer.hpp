#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lora3d/checkpoint.hpp"
#include "lora3d/config.hpp"
#include "lora3d/data.hpp"
#include "lora3d/metrics.hpp"
#include "lora3d/model.hpp"

namespace lora3d {

// Volumes resized to the training grid and normalized per config.
struct LoadedDataset {
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<Tensor> volumes;   // [c, D, H, W] each

    std::size_t size() const { return ids.size(); }
    std::size_t index_of(const std::string& id) const;
};

LoadedDataset load_dataset(const Manifest& manifest, const RunConfig& cfg);

struct EpochLog {
    int epoch;          // 1-based
    double train_loss;
    double val_acc;
    double val_auc;
};

struct FoldOutcome {
    int fold = 0;
    std::vector<EpochLog> log;
    int best_acc_epoch = 0;
    double best_acc_val_acc = 0.0, best_acc_val_auc = 0.0;
    int best_auc_epoch = 0;
    double best_auc_val_acc = 0.0, best_auc_val_auc = 0.0;
    Checkpoint best_acc_ckpt, best_auc_ckpt;
};

// Eval-mode scores over a dataset subset, batched.
std::vector<double> score_subset(AdhdClassifier& model, const LoadedDataset& data,
                                 const std::vector<std::size_t>& indices, int batch_size);

// One fold: seeded shuffled mini-batches, BCE, AdamW over adapters + head,
// per-epoch validation, best-accuracy and best-AUC checkpoints (ties keep
// the earlier epoch).
FoldOutcome train_fold(AdhdClassifier& model, const LoadedDataset& data,
                       const std::vector<std::size_t>& train_idx,
                       const std::vector<std::size_t>& val_idx, const RunConfig& cfg, int fold);

struct CrossvalOutcome {
    FoldSplit split;
    std::vector<FoldOutcome> folds;
    // Mean metrics of the two selected variants over folds.
    double acc_variant_mean_acc = 0.0, acc_variant_mean_auc = 0.0;
    double auc_variant_mean_acc = 0.0, auc_variant_mean_auc = 0.0;
    std::size_t trainable_params = 0;
};

// Stratified k folds, fresh model per fold (fold f seeds from seed + f),
// optional parallel fold execution. `fold_hook`, when set, observes each
// trained model after its fold finishes; with jobs > 1 it runs on the worker
// threads, so pass one only for single-job runs.
CrossvalOutcome run_crossval(
    const Manifest& manifest, const RunConfig& cfg, int jobs = 1,
    const std::function<void(int, AdhdClassifier&)>& fold_hook = nullptr);

std::string train_log_csv(const std::vector<EpochLog>& log);
std::string run_report_text(const RunConfig& cfg, const CrossvalOutcome& outcome,
                            double wall_seconds);

// Writes report.txt, resolved_config.txt, and per fold the training-log CSV,
// validation manifest, and both best checkpoints.
void write_crossval_outputs(const std::string& out_dir, const RunConfig& cfg,
                            const Manifest& manifest, const CrossvalOutcome& outcome,
                            double wall_seconds);

}  // namespace lora3d
