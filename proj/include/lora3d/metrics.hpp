#pragma once

#include <span>
#include <string>
#include <vector>

namespace lora3d {

struct ConfusionMatrix {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const { return tp + tn + fp + fn; }
};

// Prediction is positive iff score >= tau.
ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels,
                          double tau);

double accuracy(const ConfusionMatrix& cm);

struct RocPoint {
    double threshold;   // +inf for the initial (0, 0) point
    double fpr;
    double tpr;
};

// Threshold sweep over the distinct scores in descending order; tied scores
// move as a block. The curve starts at (0, 0) and ends at (1, 1) with FPR
// non-decreasing.
struct RocCurve {
    std::vector<RocPoint> points;
};

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal integral of TPR over FPR.
double auc(const RocCurve& curve);

// Independent rank-statistic route: the fraction of (positive, negative)
// pairs ranked correctly, ties counting one half.
double auc_rank_oracle(std::span<const double> scores, std::span<const int> labels);

// CSV rows "threshold,fpr,tpr" with a header line.
std::string roc_csv(const RocCurve& curve);

}  // namespace lora3d
