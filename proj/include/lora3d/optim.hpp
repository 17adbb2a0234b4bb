#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "lora3d/config.hpp"
#include "lora3d/model.hpp"

namespace lora3d {

// Numerically stable binary cross-entropy on a raw logit:
// loss = softplus(logit) - label * logit, d(loss)/d(logit) = sigmoid(logit) - label.
struct BceResult {
    double loss;
    double dlogit;
};
BceResult bce_with_logits(double logit, int label);

// Mean loss over a batch; gradients already carry the 1/n factor.
struct BceBatchResult {
    double loss;
    Tensor dlogits;
};
BceBatchResult bce_with_logits_batch(const Tensor& logits, std::span<const int> labels);

// One optimizer group: member parameter names with their learning rate and
// (decoupled) weight decay.
struct ParamGroup {
    std::vector<std::string> members;
    double lr = 1e-4;
    double weight_decay = 1e-4;
};

// The two default groups: adapters at lr_lora, head at lr_head, shared decay.
std::vector<ParamGroup> default_param_groups(const std::vector<ParamRef>& params,
                                             const TrainSettings& train);

// AdamW with decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
class AdamW {
public:
    AdamW(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    // Groups must partition the registry and grads must cover it exactly.
    void step(const std::vector<ParamRef>& params, const GradMap& grads);

    std::int64_t step_count() const { return t_; }

private:
    std::vector<ParamGroup> groups_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
    std::map<std::string, std::pair<double, double>> lr_wd_;   // per member name
    bool checked_ = false;
};

}  // namespace lora3d
