#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lora3d/errors.hpp"
#include "lora3d/optim.hpp"

using namespace lora3d;

TEST_CASE("bce at logit zero") {
    BceResult pos = bce_with_logits(0.0, 1);
    CHECK(pos.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(pos.dlogit == doctest::Approx(-0.5).epsilon(1e-12));
    BceResult neg = bce_with_logits(0.0, 0);
    CHECK(neg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(neg.dlogit == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("bce stays finite and small on a huge confident logit") {
    BceResult r = bce_with_logits(100.0, 1);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss >= 0.0);
    CHECK(r.loss <= 1e-6);
    BceResult wrong = bce_with_logits(-100.0, 1);
    CHECK(std::isfinite(wrong.loss));
    CHECK(wrong.loss == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("bce rejects non-binary labels") {
    CHECK_THROWS_AS(bce_with_logits(0.0, 2), ValueError);
    CHECK_THROWS_AS(bce_with_logits(0.0, -1), ValueError);
}

TEST_CASE("bce gradient matches finite differences") {
    for (double logit : {-3.0, -0.5, 0.0, 0.7, 4.0}) {
        for (int label : {0, 1}) {
            const double h = 1e-6;
            const double up = bce_with_logits(logit + h, label).loss;
            const double down = bce_with_logits(logit - h, label).loss;
            const double numeric = (up - down) / (2 * h);
            CHECK(bce_with_logits(logit, label).dlogit ==
                  doctest::Approx(numeric).epsilon(1e-6));
        }
    }
}

TEST_CASE("batch loss is the mean and gradients carry 1/n") {
    Tensor logits({2}, {0.0f, 0.0f});
    std::vector<int> labels{1, 0};
    BceBatchResult r = bce_with_logits_batch(logits, labels);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-7));
    CHECK(r.dlogits[0] == doctest::Approx(-0.25).epsilon(1e-7));
    CHECK(r.dlogits[1] == doctest::Approx(0.25).epsilon(1e-7));
}

namespace {

struct ScalarParam {
    Tensor value{Shape{1}};
    std::vector<ParamRef> refs() {
        return {{"theta", &value, ParamGroupTag::head}};
    }
};

}  // namespace

TEST_CASE("one AdamW step on a scalar matches the hand-evaluated update") {
    ScalarParam p;
    p.value[0] = 1.0f;
    AdamW opt({{{"theta"}, 0.1, 0.0}});
    GradMap grads;
    grads["theta"] = Tensor({1}, {1.0f});
    opt.step(p.refs(), grads);
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("zero gradient and zero decay change nothing") {
    ScalarParam p;
    p.value[0] = 3.25f;
    AdamW opt({{{"theta"}, 0.1, 0.0}});
    GradMap grads;
    grads["theta"] = Tensor({1});
    for (int i = 0; i < 5; ++i) opt.step(p.refs(), grads);
    CHECK(p.value[0] == 3.25f);
}

TEST_CASE("decay alone shrinks parameters geometrically") {
    ScalarParam p;
    p.value[0] = 2.0f;
    const double lr = 0.1, wd = 0.01;
    AdamW opt({{{"theta"}, lr, wd}});
    GradMap grads;
    grads["theta"] = Tensor({1});
    double expect = 2.0;
    for (int i = 0; i < 10; ++i) {
        opt.step(p.refs(), grads);
        expect *= 1.0 - lr * wd;
        CHECK(p.value[0] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("registry mismatches are rejected") {
    ScalarParam p;
    GradMap empty;
    AdamW opt({{{"theta"}, 0.1, 0.0}});
    CHECK_THROWS_AS(opt.step(p.refs(), empty), RegistryError);

    GradMap wrong_name;
    wrong_name["phi"] = Tensor({1});
    CHECK_THROWS_AS(opt.step(p.refs(), wrong_name), RegistryError);

    GradMap wrong_shape;
    wrong_shape["theta"] = Tensor({2});
    CHECK_THROWS_AS(opt.step(p.refs(), wrong_shape), RegistryError);

    AdamW missing({{{"theta", "phi"}, 0.1, 0.0}});
    GradMap ok;
    ok["theta"] = Tensor({1});
    CHECK_THROWS_AS(missing.step(p.refs(), ok), RegistryError);

    CHECK_THROWS_AS(AdamW({{{"theta"}, 0.1, 0.0}, {{"theta"}, 0.2, 0.0}}), RegistryError);
}

TEST_CASE("default groups split adapters from the head with the stated rates") {
    Tensor a({2}), b({2}), w({2});
    std::vector<ParamRef> params{{"x.lora_A", &a, ParamGroupTag::lora},
                                 {"x.lora_B", &b, ParamGroupTag::lora},
                                 {"head.fc1.weight", &w, ParamGroupTag::head}};
    TrainSettings ts;
    std::vector<ParamGroup> groups = default_param_groups(params, ts);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].members == std::vector<std::string>{"x.lora_A", "x.lora_B"});
    CHECK(groups[0].lr == 1e-4);
    CHECK(groups[0].weight_decay == 1e-4);
    CHECK(groups[1].members == std::vector<std::string>{"head.fc1.weight"});
    CHECK(groups[1].lr == 1e-5);
    CHECK(groups[1].weight_decay == 1e-4);
}

TEST_CASE("AdamW trajectory matches a hand-rolled reference loop") {
    // Reference in double precision, same update order.
    const double lr = 0.05, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double theta_ref = 0.7, m = 0.0, v = 0.0;
    ScalarParam p;
    p.value[0] = 0.7f;
    AdamW opt({{{"theta"}, lr, wd}}, b1, b2, eps);
    for (int t = 1; t <= 25; ++t) {
        const double g = std::sin(0.3 * t);
        GradMap grads;
        grads["theta"] = Tensor({1}, {static_cast<float>(g)});
        opt.step(p.refs(), grads);
        const double gd = static_cast<double>(static_cast<float>(g));
        m = b1 * m + (1 - b1) * gd;
        v = b2 * v + (1 - b2) * gd * gd;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        theta_ref = theta_ref - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * theta_ref;
        CHECK(p.value[0] == doctest::Approx(theta_ref).epsilon(1e-4));
    }
}
