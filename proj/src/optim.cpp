#include "lora3d/optim.hpp"

#include <cmath>

#include "lora3d/errors.hpp"

namespace lora3d {

BceResult bce_with_logits(double logit, int label) {
    if (label != 0 && label != 1) {
        throw ValueError("bce_with_logits: label must be 0 or 1, got " + std::to_string(label));
    }
    const double softplus = std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
    const double sigmoid = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                                        : std::exp(logit) / (1.0 + std::exp(logit));
    return {softplus - static_cast<double>(label) * logit,
            sigmoid - static_cast<double>(label)};
}

BceBatchResult bce_with_logits_batch(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 1 || logits.size() != labels.size()) {
        throw ShapeError("bce batch: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    if (logits.empty()) throw ValueError("bce batch: empty batch");
    BceBatchResult out{0.0, Tensor(logits.shape())};
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const BceResult r = bce_with_logits(static_cast<double>(logits[i]), labels[i]);
        out.loss += r.loss * inv_n;
        out.dlogits[i] = static_cast<float>(r.dlogit * inv_n);
    }
    return out;
}

std::vector<ParamGroup> default_param_groups(const std::vector<ParamRef>& params,
                                             const TrainSettings& train) {
    ParamGroup lora{{}, train.lr_lora, train.weight_decay};
    ParamGroup head{{}, train.lr_head, train.weight_decay};
    for (const ParamRef& p : params) {
        (p.group == ParamGroupTag::lora ? lora : head).members.push_back(p.name);
    }
    std::vector<ParamGroup> groups;
    if (!lora.members.empty()) groups.push_back(std::move(lora));
    if (!head.members.empty()) groups.push_back(std::move(head));
    return groups;
}

AdamW::AdamW(std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const ParamGroup& g : groups_) {
        for (const std::string& name : g.members) {
            if (!lr_wd_.emplace(name, std::make_pair(g.lr, g.weight_decay)).second) {
                throw RegistryError("parameter '" + name + "' appears in more than one group");
            }
        }
    }
}

void AdamW::step(const std::vector<ParamRef>& params, const GradMap& grads) {
    if (!checked_) {
        // Groups must partition the registry.
        if (params.size() != lr_wd_.size()) {
            throw RegistryError("optimizer groups cover " + std::to_string(lr_wd_.size()) +
                                " parameters, registry has " + std::to_string(params.size()));
        }
        for (const ParamRef& p : params) {
            if (lr_wd_.find(p.name) == lr_wd_.end()) {
                throw RegistryError("parameter '" + p.name + "' is missing from all groups");
            }
        }
        checked_ = true;
    }
    if (grads.size() != params.size()) {
        throw RegistryError("gradient table has " + std::to_string(grads.size()) +
                            " entries, registry has " + std::to_string(params.size()));
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const ParamRef& p : params) {
        const auto git = grads.find(p.name);
        if (git == grads.end()) {
            throw RegistryError("no gradient for parameter '" + p.name + "'");
        }
        const Tensor& g = git->second;
        if (g.shape() != p.tensor->shape()) {
            throw RegistryError("gradient shape " + shape_str(g.shape()) + " for '" + p.name +
                                "' does not match parameter " + shape_str(p.tensor->shape()));
        }
        Tensor& m = m_.try_emplace(p.name, Tensor(p.tensor->shape())).first->second;
        Tensor& v = v_.try_emplace(p.name, Tensor(p.tensor->shape())).first->second;
        const auto [lr, wd] = lr_wd_.at(p.name);
        Tensor& theta = *p.tensor;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
            const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            const double old = static_cast<double>(theta[i]);
            theta[i] =
                static_cast<float>(old - lr * (mhat / (std::sqrt(vhat) + eps_)) - lr * wd * old);
        }
    }
}

}  // namespace lora3d
