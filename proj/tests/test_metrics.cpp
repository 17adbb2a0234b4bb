#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "lora3d/errors.hpp"
#include "lora3d/metrics.hpp"
#include "lora3d/rng.hpp"

using namespace lora3d;

TEST_CASE("threshold zero predicts everything positive") {
    std::vector<double> s{0.1, 0.5, 0.9, 0.3};
    std::vector<int> y{1, 0, 1, 0};
    ConfusionMatrix cm = confusion(s, y, 0.0);
    CHECK(cm.tp == 2);
    CHECK(cm.fp == 2);
    CHECK(cm.tn == 0);
    CHECK(cm.fn == 0);
}

TEST_CASE("threshold above one predicts everything negative") {
    std::vector<double> s{0.1, 0.5, 0.9, 1.0};
    std::vector<int> y{1, 0, 1, 0};
    ConfusionMatrix cm = confusion(s, y, 1.0000001);
    CHECK(cm.tp == 0);
    CHECK(cm.fp == 0);
    CHECK(cm.tn == 2);
    CHECK(cm.fn == 2);
}

TEST_CASE("confusion hand tally") {
    std::vector<double> s{0.2, 0.6, 0.7};
    std::vector<int> y{0, 1, 0};
    ConfusionMatrix cm = confusion(s, y, 0.5);
    CHECK(cm.tp == 1);
    CHECK(cm.fp == 1);
    CHECK(cm.tn == 1);
    CHECK(cm.fn == 0);
}

TEST_CASE("prediction at exactly tau counts as positive") {
    std::vector<double> s{0.5};
    std::vector<int> y{1};
    CHECK(confusion(s, y, 0.5).tp == 1);
}

TEST_CASE("confusion rejects malformed inputs") {
    std::vector<double> s{0.5, 0.2};
    std::vector<int> short_y{1};
    CHECK_THROWS_AS(confusion(s, short_y, 0.5), ValueError);
    std::vector<int> bad_y{1, 2};
    CHECK_THROWS_AS(confusion(s, bad_y, 0.5), ValueError);
}

TEST_CASE("accuracy basics") {
    CHECK(accuracy({1, 1, 0, 0}) == 1.0);
    CHECK(accuracy({0, 0, 3, 2}) == 0.0);
    ConfusionMatrix cm{46, 47, 15, 21};
    CHECK(accuracy(cm) == doctest::Approx(93.0 / 129.0).epsilon(1e-12));
    CHECK(accuracy(cm) == doctest::Approx(0.721).epsilon(1e-3));
    CHECK_THROWS_AS(accuracy({0, 0, 0, 0}), ValueError);
}

TEST_CASE("roc curve for the worked four-sample example") {
    std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    std::vector<int> y{0, 0, 1, 1};
    RocCurve c = roc_curve(s, y);
    REQUIRE(c.points.size() == 5);
    const double eps = 1e-12;
    auto check_point = [&](std::size_t i, double fpr, double tpr) {
        CHECK(std::abs(c.points[i].fpr - fpr) <= eps);
        CHECK(std::abs(c.points[i].tpr - tpr) <= eps);
    };
    check_point(0, 0.0, 0.0);
    check_point(1, 0.0, 0.5);
    check_point(2, 0.5, 0.5);
    check_point(3, 0.5, 1.0);
    check_point(4, 1.0, 1.0);
    CHECK(auc(c) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(auc_rank_oracle(s, y) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("perfect separation reaches (0,1) and AUC 1") {
    std::vector<double> s{0.9, 0.8, 0.2, 0.1};
    std::vector<int> y{1, 1, 0, 0};
    RocCurve c = roc_curve(s, y);
    bool hits_corner = false;
    for (const RocPoint& p : c.points) {
        if (p.fpr == 0.0 && p.tpr == 1.0) hits_corner = true;
    }
    CHECK(hits_corner);
    CHECK(auc(c) == 1.0);
    CHECK(auc_rank_oracle(s, y) == 1.0);
}

TEST_CASE("constant scores collapse the curve to two points and AUC one half") {
    std::vector<double> s{0.5, 0.5, 0.5, 0.5};
    std::vector<int> y{1, 0, 1, 0};
    RocCurve c = roc_curve(s, y);
    REQUIRE(c.points.size() == 2);
    CHECK(c.points[0].fpr == 0.0);
    CHECK(c.points[0].tpr == 0.0);
    CHECK(c.points[1].fpr == 1.0);
    CHECK(c.points[1].tpr == 1.0);
    CHECK(auc(c) == 0.5);
    CHECK(auc_rank_oracle(s, y) == 0.5);
}

TEST_CASE("single-class inputs are rejected as degenerate") {
    std::vector<double> s{0.5, 0.7};
    std::vector<int> ones{1, 1};
    std::vector<int> zeros{0, 0};
    CHECK_THROWS_AS(roc_curve(s, ones), ValueError);
    CHECK_THROWS_AS(auc_rank_oracle(s, zeros), ValueError);
}

TEST_CASE("trapezoidal AUC equals the rank oracle on randomized sets") {
    RandomSource rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.uniform_below(60);
        std::vector<double> s(n);
        std::vector<int> y(n);
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse grid forces plenty of ties.
            s[i] = static_cast<double>(rng.uniform_below(8)) / 8.0;
            y[i] = static_cast<int>(rng.uniform_below(2));
            (y[i] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        RocCurve c = roc_curve(s, y);
        CHECK(std::abs(auc(c) - auc_rank_oracle(s, y)) <= 1e-12);
        // Structural invariants of every curve.
        CHECK(c.points.front().fpr == 0.0);
        CHECK(c.points.front().tpr == 0.0);
        CHECK(c.points.back().fpr == 1.0);
        CHECK(c.points.back().tpr == 1.0);
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            CHECK(c.points[i].fpr >= c.points[i - 1].fpr);
            CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
        }
    }
}

TEST_CASE("AUC is invariant under strictly increasing transforms") {
    RandomSource rng(321);
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = rng.uniform();
        y[i] = static_cast<int>(rng.uniform_below(2));
    }
    y[0] = 1;
    y[1] = 0;
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) + 7.0;
    CHECK(auc(roc_curve(s, y)) == doctest::Approx(auc(roc_curve(t, y))).epsilon(1e-12));
}

TEST_CASE("reversing labels maps AUC to its complement") {
    RandomSource rng(55);
    std::vector<double> s(30);
    std::vector<int> y(30), flipped(30);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = static_cast<double>(rng.uniform_below(10)) / 10.0;
        y[i] = static_cast<int>(rng.uniform_below(2));
        flipped[i] = 1 - y[i];
    }
    y[0] = 1;
    y[1] = 0;
    flipped[0] = 0;
    flipped[1] = 1;
    CHECK(auc(roc_curve(s, y)) ==
          doctest::Approx(1.0 - auc(roc_curve(s, flipped))).epsilon(1e-12));
}

TEST_CASE("roc csv has a header and one row per point") {
    std::vector<double> s{0.1, 0.9};
    std::vector<int> y{0, 1};
    const std::string csv = roc_csv(roc_curve(s, y));
    CHECK(csv.rfind("threshold,fpr,tpr\n", 0) == 0);
    std::size_t rows = 0;
    for (char c : csv) rows += (c == '\n') ? 1 : 0;
    CHECK(rows == 4);   // header + 3 points
    CHECK(csv.find("inf") != std::string::npos);
}
