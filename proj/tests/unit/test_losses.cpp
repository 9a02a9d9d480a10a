#include <doctest.h>

#include <cmath>

#include "af3d/error.hpp"
#include "af3d/losses.hpp"
#include "af3d/rng.hpp"
#include "oracles.hpp"

using namespace af3d;

namespace {

double logit_of(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One level with `n` cells and the given labels; psi defaults to 1.
LabelGrid make_grid(const std::vector<Label>& labels, const std::vector<double>& psi = {}) {
    LabelGrid grid;
    FeatureGridSpec spec{4, {1, 1, static_cast<int>(labels.size())}, 0};
    LevelLabels level(spec, 1);
    level.labels = labels;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        level.psi[i] = labels[i] == Label::Positive ? (psi.empty() ? 1.0 : psi[i]) : 0.0;
    }
    grid.levels.push_back(level);
    return grid;
}

LabelGrid random_grid(Rng& rng, int n) {
    std::vector<Label> labels;
    std::vector<double> psi;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        labels.push_back(u < 0.3 ? Label::Positive : (u < 0.45 ? Label::Ignored : Label::Negative));
        psi.push_back(rng.uniform(0.1, 1.0));
    }
    auto grid = make_grid(labels, psi);
    for (auto& o : grid.levels[0].offsets) {
        o = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 2)};
    }
    return grid;
}

LevelPrediction random_prediction(Rng& rng, int n) {
    LevelPrediction p;
    for (int i = 0; i < n; ++i) {
        p.logits.push_back(rng.uniform(-4, 4));
        p.offsets.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-2, 3)});
    }
    return p;
}

}  // namespace

TEST_CASE("focal term values") {
    const LossConfig cfg;
    CHECK(focal_term(0.5, 0, cfg).value == doctest::Approx(-0.75 * 0.25 * std::log(0.5)).epsilon(1e-12));
    CHECK(focal_term(0.5, 0, cfg).value == doctest::Approx(0.129967).epsilon(1e-5));
    CHECK(focal_term(1e-9, 0, cfg).value < 1e-20);
    CHECK_THROWS_AS(focal_term(0.0, 0, cfg), Error);
    CHECK_THROWS_AS(focal_term(1.0, 1, cfg), Error);
    CHECK_THROWS_AS(focal_term_logit(std::nan(""), 1, cfg), Error);
}

TEST_CASE("focal term gradient matches central differences") {
    const LossConfig cfg;
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        double z = rng.uniform(-6, 6);
        const int y = static_cast<int>(rng.uniform_int(0, 1));
        const double analytic = focal_term(sigmoid(z), y, cfg).grad;
        const double numeric =
            oracle::central_difference([&] { return focal_term(sigmoid(z), y, cfg).value; }, z, 1e-5);
        CHECK(oracle::relative_error(analytic, numeric, 1e-10) < 1e-6);
        CHECK(focal_term_logit(z, y, cfg).value == doctest::Approx(focal_term(sigmoid(z), y, cfg).value).epsilon(1e-9));
        CHECK(focal_term_logit(z, y, cfg).grad == doctest::Approx(analytic).epsilon(1e-9));
    }
}

TEST_CASE("classification loss hand example") {
    const auto grid = make_grid({Label::Positive, Label::Negative, Label::Negative});
    const LevelPrediction pred{{logit_of(0.9), logit_of(0.1), logit_of(0.1)}, std::vector<Offsets>(3)};
    const auto r = classification_loss({pred}, grid, LossConfig{});
    const double expected = -std::log(0.9) + 2 * (-0.75 * 0.01 * std::log(0.9));
    CHECK(r.value == doctest::Approx(expected).epsilon(1e-9));
    CHECK(r.value == doctest::Approx(0.106941).epsilon(1e-5));
    CHECK(r.n_pos == 1);
    CHECK(r.n_neg == 2);
}

TEST_CASE("classification loss special cases") {
    const LossConfig cfg;
    SUBCASE("all ignored") {
        const auto grid = make_grid({Label::Ignored, Label::Ignored});
        const auto r = classification_loss({LevelPrediction{{1.0, -2.0}, std::vector<Offsets>(2)}}, grid, cfg);
        CHECK(r.value == 0.0);
        CHECK(r.grads[0] == std::vector<double>{0.0, 0.0});
    }
    SUBCASE("doubling psi doubles the positive contribution") {
        const LevelPrediction pred{{0.3}, std::vector<Offsets>(1)};
        const auto one = classification_loss({pred}, make_grid({Label::Positive}, {0.4}), cfg);
        const auto two = classification_loss({pred}, make_grid({Label::Positive}, {0.8}), cfg);
        CHECK(two.value == doctest::Approx(2 * one.value).epsilon(1e-12));
    }
    SUBCASE("ignored cells are gradient-invisible") {
        Rng rng(4);
        const auto grid = random_grid(rng, 30);
        auto pred = random_prediction(rng, 30);
        const double base = classification_loss({pred}, grid, cfg).value;
        for (int i = 0; i < 30; ++i) {
            if (grid.levels[0].labels[i] == Label::Ignored) {
                pred.logits[i] += 3.0;
            }
        }
        CHECK(classification_loss({pred}, grid, cfg).value == base);
    }
    SUBCASE("mismatched shapes are rejected") {
        const auto grid = make_grid({Label::Positive, Label::Negative});
        CHECK_THROWS_AS(classification_loss({LevelPrediction{{0.0}, std::vector<Offsets>(1)}}, grid, cfg), Error);
    }
}

TEST_CASE("classification loss gradient matches central differences") {
    const LossConfig cfg;
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto grid = random_grid(rng, 25);
        std::vector<LevelPrediction> preds = {random_prediction(rng, 25)};
        const auto r = classification_loss(preds, grid, cfg);
        CHECK(r.value >= 0.0);
        for (int i = 0; i < 25; ++i) {
            const double numeric = oracle::central_difference(
                [&] { return classification_loss(preds, grid, cfg).value; }, preds[0].logits[i], 1e-5);
            CHECK(oracle::relative_error(r.grads[0][i], numeric, 1e-9) < 1e-4);
        }
    }
}

TEST_CASE("smooth L1") {
    const Offsets t{0.1, -0.2, 0.3, 0.4};
    CHECK(smooth_l1(t, t, 1.0).value == 0.0);
    CHECK(smooth_l1({0.5, 0, 0, 0}, {0, 0, 0, 0}, 1.0).value == doctest::Approx(0.125));
    CHECK(smooth_l1({2.0, 0, 0, 0}, {0, 0, 0, 0}, 1.0).value == doctest::Approx(1.5));

    // Value and slope are continuous at |x| = beta.
    const double below = smooth_l1({1.0 - 1e-9, 0, 0, 0}, {0, 0, 0, 0}, 1.0).value;
    const double above = smooth_l1({1.0 + 1e-9, 0, 0, 0}, {0, 0, 0, 0}, 1.0).value;
    CHECK(std::abs(above - below) < 1e-8);
    CHECK(smooth_l1({1.0 - 1e-9, 0, 0, 0}, {0, 0, 0, 0}, 1.0).grad[0] ==
          doctest::Approx(smooth_l1({1.0 + 1e-9, 0, 0, 0}, {0, 0, 0, 0}, 1.0).grad[0]).epsilon(1e-6));

    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        Offsets pred{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const Offsets target{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const double beta = rng.uniform(0.2, 2.0);
        const auto r = smooth_l1(pred, target, beta);
        for (int c = 0; c < 4; ++c) {
            const double numeric =
                oracle::central_difference([&] { return smooth_l1(pred, target, beta).value; }, pred[c], 1e-6);
            CHECK(oracle::relative_error(r.grad[c], numeric, 1e-9) < 1e-4);
        }
    }
}

TEST_CASE("localization loss") {
    const LossConfig cfg;
    auto grid = make_grid({Label::Positive, Label::Negative});
    grid.levels[0].offsets[0] = {0.0, 0.0, 0.0, 0.0};
    LevelPrediction pred{{0.0, 0.0}, {Offsets{0.5, 0, 0, 0}, Offsets{9, 9, 9, 9}}};
    CHECK(localization_loss({pred}, grid, cfg).value == doctest::Approx(0.125));
    pred.offsets[0] = grid.levels[0].offsets[0];
    CHECK(localization_loss({pred}, grid, cfg).value == 0.0);

    const auto none = make_grid({Label::Negative, Label::Ignored});
    const auto r = localization_loss({pred}, none, cfg);
    CHECK(r.value == 0.0);
    for (const auto& g : r.grads[0]) {
        CHECK(g == Offsets{0, 0, 0, 0});
    }

    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const auto g = random_grid(rng, 20);
        std::vector<LevelPrediction> preds = {random_prediction(rng, 20)};
        const auto res = localization_loss(preds, g, cfg);
        for (int i = 0; i < 20; ++i) {
            for (int c = 0; c < 4; ++c) {
                const double numeric = oracle::central_difference(
                    [&] { return localization_loss(preds, g, cfg).value; }, preds[0].offsets[i][c], 1e-6);
                CHECK(oracle::relative_error(res.grads[0][i][c], numeric, 1e-9) < 1e-4);
            }
        }
    }
}

TEST_CASE("total loss") {
    const auto a = total_loss(0.5, 0.25);
    CHECK(a.l_total == 0.75);
    CHECK(total_loss(0.0, 0.0).l_total == 0.0);

    Rng rng(10);
    const LossConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        const auto g = random_grid(rng, 15);
        const std::vector<LevelPrediction> preds = {random_prediction(rng, 15)};
        const auto cls = classification_loss(preds, g, cfg);
        const auto loc = localization_loss(preds, g, cfg);
        const auto t = total_loss(cls, loc);

        // Recompute from the definition.
        int n_pos = 0;
        for (const auto l : g.levels[0].labels) {
            n_pos += l == Label::Positive;
        }
        const double norm = std::max(n_pos, 1);
        double c = 0.0;
        double l = 0.0;
        for (int i = 0; i < 15; ++i) {
            const double p = sigmoid(preds[0].logits[i]);
            const auto label = g.levels[0].labels[i];
            if (label == Label::Positive) {
                c += -g.levels[0].psi[i] * std::log(p);
                for (int k = 0; k < 4; ++k) {
                    const double x = std::abs(preds[0].offsets[i][k] - g.levels[0].offsets[i][k]);
                    l += x < 1.0 ? 0.5 * x * x : x - 0.5;
                }
            } else if (label == Label::Negative) {
                c += -0.75 * p * p * std::log(1.0 - p);
            }
        }
        CHECK(t.l_cls == doctest::Approx(c / norm).epsilon(1e-9));
        CHECK(t.l_loc == doctest::Approx(l / norm).epsilon(1e-9));
        CHECK(t.l_total == t.l_cls + t.l_loc);
        CHECK(t.n_pos == n_pos);
    }
}
