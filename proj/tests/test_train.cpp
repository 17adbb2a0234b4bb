#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>
#include <unistd.h>

#include "lora3d/errors.hpp"
#include "lora3d/optim.hpp"
#include "lora3d/trainer.hpp"

namespace fs = std::filesystem;
using namespace lora3d;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("lora3d_train_" + tag + "_" +
                                            std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

RunConfig desk_config(int epochs, std::uint64_t seed = 42) {
    RunConfig cfg;
    cfg.model.preset = "tiny";
    cfg.model.rank = 4;
    cfg.model.input_extents = {8, 8, 8};
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 4;
    cfg.train.seed = seed;
    cfg.train.folds = 2;
    return cfg;
}

Manifest make_synth(const TempDir& dir, const std::string& sub, int n_per_class,
                    double separation, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n_per_class = n_per_class;
    cfg.extents = {8, 8, 8};
    cfg.seed = seed;
    cfg.separation = separation;
    return synth_generate(dir.file(sub), cfg);
}

}  // namespace

TEST_CASE("the tiny model overfits an 8-sample separable set within 200 epochs") {
    TempDir dir("overfit");
    const Manifest manifest = make_synth(dir, "d", 4, 3.0, 5);
    // Overfit sanity configuration: regularization off, sanity-scale rates.
    RunConfig cfg = desk_config(1);
    cfg.train.batch_size = 2;
    cfg.train.dropout = 0.0;
    cfg.train.weight_decay = 0.0;
    cfg.train.lr_lora = 1e-3;
    cfg.train.lr_head = 1e-4;
    const LoadedDataset data = load_dataset(manifest, cfg);
    AdhdClassifier model = build_classifier(cfg.model, cfg.train.seed);
    model.head.dropout_rate = cfg.train.dropout;
    std::vector<ParamRef> params = model.trainable();
    AdamW opt(default_param_groups(params, cfg.train), cfg.train.beta1, cfg.train.beta2,
              cfg.train.eps);
    RandomSource shuffle_rng(derive_seed(cfg.train.seed, 10));
    RandomSource dropout_rng(derive_seed(cfg.train.seed, 11));

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double train_acc = 0.0;
    double first_loss = 0.0, last_loss = 0.0;
    int reached_at = -1;
    for (int epoch = 1; epoch <= 200; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
        for (std::size_t b = 0; b < order.size(); b += bs) {
            const std::size_t end = std::min(order.size(), b + bs);
            Shape shape = data.volumes[0].shape();
            shape.insert(shape.begin(), end - b);
            Tensor batch(shape);
            std::vector<int> labels;
            const std::size_t stride = data.volumes[0].size();
            for (std::size_t i = b; i < end; ++i) {
                const Tensor& v = data.volumes[order[i]];
                std::copy(v.data(), v.data() + stride, batch.data() + (i - b) * stride);
                labels.push_back(data.labels[order[i]]);
            }
            Tensor logits = model.forward_logits(batch, true, &dropout_rng);
            BceBatchResult bce = bce_with_logits_batch(logits, labels);
            loss_sum += bce.loss * static_cast<double>(end - b);
            opt.step(params, model.backward(bce.dlogits));
        }
        if (epoch == 1) first_loss = loss_sum / static_cast<double>(order.size());
        last_loss = loss_sum / static_cast<double>(order.size());
        std::vector<std::size_t> all(order.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const std::vector<double> scores = score_subset(model, data, all, 4);
        train_acc = accuracy(confusion(scores, data.labels, 0.5));
        if (train_acc == 1.0 && reached_at < 0) reached_at = epoch;
        if (train_acc == 1.0 && epoch >= 2) break;
    }
    INFO("reached training accuracy 1.0 at epoch ", reached_at);
    CHECK(train_acc == 1.0);
    CHECK(last_loss < first_loss);
}

TEST_CASE("train_fold logs one row per epoch and selects maxima") {
    TempDir dir("fold");
    const Manifest manifest = make_synth(dir, "d", 8, 2.5, 9);
    RunConfig cfg = desk_config(6);
    const LoadedDataset data = load_dataset(manifest, cfg);
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (i % 4 == 0 ? val_idx : train_idx).push_back(i);
    }
    AdhdClassifier model = build_classifier(cfg.model, cfg.train.seed);
    FoldOutcome out = train_fold(model, data, train_idx, val_idx, cfg, 0);
    REQUIRE(out.log.size() == 6);

    double max_acc = 0.0, max_auc = 0.0;
    int first_acc_epoch = 0, first_auc_epoch = 0;
    for (const EpochLog& row : out.log) {
        if (row.val_acc > max_acc) {
            max_acc = row.val_acc;
            first_acc_epoch = row.epoch;
        }
        if (row.val_auc > max_auc) {
            max_auc = row.val_auc;
            first_auc_epoch = row.epoch;
        }
    }
    CHECK(out.best_acc_val_acc == max_acc);
    CHECK(out.best_acc_epoch == first_acc_epoch);   // ties keep the earlier epoch
    CHECK(out.best_auc_val_auc == max_auc);
    CHECK(out.best_auc_epoch == first_auc_epoch);
    CHECK(out.best_acc_ckpt.metadata.at("epoch") == std::to_string(out.best_acc_epoch));
}

TEST_CASE("train_fold with one epoch logs exactly one row from epoch 1") {
    TempDir dir("one_epoch");
    const Manifest manifest = make_synth(dir, "d", 4, 2.0, 3);
    RunConfig cfg = desk_config(1);
    const LoadedDataset data = load_dataset(manifest, cfg);
    std::vector<std::size_t> train_idx{1, 2, 3, 4, 5, 6}, val_idx{0, 7};   // one per class
    AdhdClassifier model = build_classifier(cfg.model, cfg.train.seed);
    FoldOutcome out = train_fold(model, data, train_idx, val_idx, cfg, 0);
    REQUIRE(out.log.size() == 1);
    CHECK(out.best_acc_epoch == 1);
    CHECK(out.best_auc_epoch == 1);
}

TEST_CASE("empty train or validation set is a configuration error") {
    TempDir dir("empty");
    const Manifest manifest = make_synth(dir, "d", 3, 2.0, 3);
    RunConfig cfg = desk_config(1);
    const LoadedDataset data = load_dataset(manifest, cfg);
    AdhdClassifier model = build_classifier(cfg.model, cfg.train.seed);
    CHECK_THROWS_AS(train_fold(model, data, {}, {0}, cfg, 0), ConfigError);
    CHECK_THROWS_AS(train_fold(model, data, {0}, {}, cfg, 0), ConfigError);
}

TEST_CASE("identical config and seed reproduce the training log bit for bit") {
    TempDir dir("det");
    const Manifest manifest = make_synth(dir, "d", 6, 2.0, 13);
    RunConfig cfg = desk_config(4);
    const LoadedDataset data = load_dataset(manifest, cfg);
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (i % 3 == 0 ? val_idx : train_idx).push_back(i);
    }
    AdhdClassifier m1 = build_classifier(cfg.model, cfg.train.seed);
    AdhdClassifier m2 = build_classifier(cfg.model, cfg.train.seed);
    FoldOutcome a = train_fold(m1, data, train_idx, val_idx, cfg, 0);
    FoldOutcome b = train_fold(m2, data, train_idx, val_idx, cfg, 0);
    CHECK(train_log_csv(a.log) == train_log_csv(b.log));
    CHECK(serialize_checkpoint(a.best_acc_ckpt) == serialize_checkpoint(b.best_acc_ckpt));
    CHECK(serialize_checkpoint(a.best_auc_ckpt) == serialize_checkpoint(b.best_auc_ckpt));
}

TEST_CASE("run_crossval keeps frozen tensors bit-identical and partitions folds") {
    TempDir dir("crossval");
    const Manifest manifest = make_synth(dir, "d", 6, 2.0, 17);
    RunConfig cfg = desk_config(2);
    cfg.train.folds = 3;

    bool checked_any = false;
    auto hook = [&](int fold, AdhdClassifier& model) {
        AdhdClassifier fresh = build_classifier(
            cfg.model, cfg.train.seed + static_cast<std::uint64_t>(fold));
        auto trained = model.frozen_named();
        auto initial = fresh.frozen_named();
        REQUIRE(trained.size() == initial.size());
        for (std::size_t i = 0; i < trained.size(); ++i) {
            CHECK(trained[i].first == initial[i].first);
            CHECK(max_abs_diff(*trained[i].second, *initial[i].second) == 0.0);
        }
        checked_any = true;
    };
    CrossvalOutcome outcome = run_crossval(manifest, cfg, 1, hook);
    CHECK(checked_any);

    // Validation folds partition the manifest.
    std::set<std::string> seen;
    for (const auto& fold : outcome.split.val_folds) {
        for (const std::string& id : fold) CHECK(seen.insert(id).second);
    }
    CHECK(seen.size() == manifest.rows.size());

    // Mean metrics are the arithmetic fold means.
    double acc = 0.0, auc_v = 0.0;
    for (const FoldOutcome& f : outcome.folds) {
        acc += f.best_acc_val_acc;
        auc_v += f.best_auc_val_auc;
    }
    CHECK(outcome.acc_variant_mean_acc == doctest::Approx(acc / 3.0).epsilon(1e-12));
    CHECK(outcome.auc_variant_mean_auc == doctest::Approx(auc_v / 3.0).epsilon(1e-12));
}

TEST_CASE("crossval reports are byte-identical apart from the wall clock") {
    TempDir dir("report");
    const Manifest manifest = make_synth(dir, "d", 6, 2.0, 21);
    RunConfig cfg = desk_config(2);
    cfg.train.folds = 2;
    CrossvalOutcome a = run_crossval(manifest, cfg);
    CrossvalOutcome b = run_crossval(manifest, cfg);
    CHECK(run_report_text(cfg, a, 1.0) == run_report_text(cfg, b, 1.0));
    CHECK(serialize_checkpoint(a.folds[0].best_acc_ckpt) ==
          serialize_checkpoint(b.folds[0].best_acc_ckpt));
}

TEST_CASE("parallel fold jobs produce the same outcome as sequential") {
    TempDir dir("jobs");
    const Manifest manifest = make_synth(dir, "d", 6, 2.0, 23);
    RunConfig cfg = desk_config(2);
    cfg.train.folds = 3;
    CrossvalOutcome seq = run_crossval(manifest, cfg, 1);
    CrossvalOutcome par = run_crossval(manifest, cfg, 3);
    CHECK(run_report_text(cfg, seq, 0.0) == run_report_text(cfg, par, 0.0));
}

TEST_CASE("best checkpoints re-evaluate to their logged metrics exactly") {
    TempDir dir("selection");
    const Manifest manifest = make_synth(dir, "d", 6, 2.5, 29);
    RunConfig cfg = desk_config(3);
    cfg.train.folds = 2;
    CrossvalOutcome outcome = run_crossval(manifest, cfg);
    const LoadedDataset data = load_dataset(manifest, cfg);

    for (const FoldOutcome& fold : outcome.folds) {
        std::vector<std::size_t> val_idx;
        std::vector<int> val_labels;
        for (const std::string& id :
             outcome.split.val_folds[static_cast<std::size_t>(fold.fold)]) {
            val_idx.push_back(data.index_of(id));
        }
        std::sort(val_idx.begin(), val_idx.end());
        for (std::size_t i : val_idx) val_labels.push_back(data.labels[i]);

        AdhdClassifier model = build_classifier(
            cfg.model, cfg.train.seed + static_cast<std::uint64_t>(fold.fold));
        model.load_tensors(fold.best_acc_ckpt.tensors);
        std::vector<double> scores = score_subset(model, data, val_idx, cfg.train.batch_size);
        CHECK(accuracy(confusion(scores, val_labels, cfg.train.threshold)) ==
              fold.best_acc_val_acc);

        AdhdClassifier auc_model = build_classifier(
            cfg.model, cfg.train.seed + static_cast<std::uint64_t>(fold.fold));
        auc_model.load_tensors(fold.best_auc_ckpt.tensors);
        std::vector<double> auc_scores =
            score_subset(auc_model, data, val_idx, cfg.train.batch_size);
        CHECK(auc(roc_curve(auc_scores, val_labels)) == fold.best_auc_val_auc);
    }
}

TEST_CASE("crossval output files land on disk with the expected names") {
    TempDir dir("outputs");
    const Manifest manifest = make_synth(dir, "d", 6, 2.0, 31);
    RunConfig cfg = desk_config(2);
    cfg.train.folds = 2;
    CrossvalOutcome outcome = run_crossval(manifest, cfg);
    write_crossval_outputs(dir.file("out"), cfg, manifest, outcome, 1.5);
    for (const char* name :
         {"report.txt", "resolved_config.txt", "fold0_log.csv", "fold0_best_acc.l3ck",
          "fold0_best_auc.l3ck", "fold0_val_manifest.csv", "fold1_log.csv"}) {
        CHECK(fs::exists(fs::path(dir.file("out")) / name));
    }
    // Logged CSV: provenance stamp, header, one row per epoch.
    std::ifstream in(dir.file("out") + "/fold0_log.csv");
    std::string line;
    std::size_t lines = 0;
    bool stamped = false;
    while (std::getline(in, line)) {
        if (lines == 0) stamped = line.rfind("# config_hash = ", 0) == 0;
        ++lines;
    }
    CHECK(stamped);
    CHECK(lines == 4);
}
