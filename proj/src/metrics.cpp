#include "lora3d/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "lora3d/errors.hpp"

namespace lora3d {

namespace {

void check_labels(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw ValueError("scores (" + std::to_string(scores.size()) + ") and labels (" +
                         std::to_string(labels.size()) + ") differ in length");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValueError("labels must be 0 or 1, got " + std::to_string(y));
    }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
    std::size_t pos = 0;
    for (int y : labels) pos += static_cast<std::size_t>(y);
    return {pos, labels.size() - pos};
}

}  // namespace

ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels,
                          double tau) {
    check_labels(scores, labels);
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= tau;
        if (labels[i] == 1) {
            pred ? ++cm.tp : ++cm.fn;
        } else {
            pred ? ++cm.fp : ++cm.tn;
        }
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    const std::size_t total = cm.total();
    if (total == 0) throw ValueError("accuracy of an empty confusion matrix");
    return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(total);
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    check_labels(scores, labels);
    auto [n_pos, n_neg] = class_counts(labels);
    if (n_pos == 0 || n_neg == 0) {
        throw ValueError("roc_curve: both classes must be present (got " +
                         std::to_string(n_pos) + " positives, " + std::to_string(n_neg) +
                         " negatives)");
    }
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        // All samples tied at this score enter together.
        while (i < order.size() && scores[order[i]] == threshold) {
            labels[order[i]] == 1 ? ++tp : ++fp;
            ++i;
        }
        curve.points.push_back({threshold,
                                static_cast<double>(fp) / static_cast<double>(n_neg),
                                static_cast<double>(tp) / static_cast<double>(n_pos)});
    }
    return curve;
}

double auc(const RocCurve& curve) {
    if (curve.points.size() < 2) throw ValueError("auc: degenerate curve");
    double area = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const RocPoint& a = curve.points[i - 1];
        const RocPoint& b = curve.points[i];
        area += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
    }
    return area;
}

double auc_rank_oracle(std::span<const double> scores, std::span<const int> labels) {
    check_labels(scores, labels);
    auto [n_pos, n_neg] = class_counts(labels);
    if (n_pos == 0 || n_neg == 0) {
        throw ValueError("auc_rank_oracle: both classes must be present");
    }
    double numerator = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) {
                numerator += 1.0;
            } else if (scores[i] == scores[j]) {
                numerator += 0.5;
            }
        }
    }
    return numerator / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::string roc_csv(const RocCurve& curve) {
    std::string out = "threshold,fpr,tpr\n";
    char buf[128];
    for (const RocPoint& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
        out += buf;
    }
    return out;
}

}  // namespace lora3d
