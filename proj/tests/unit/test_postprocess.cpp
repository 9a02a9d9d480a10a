#include <doctest.h>

#include <cmath>

#include "af3d/postprocess.hpp"
#include "af3d/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace af3d;
using testutil::error_code_of;

namespace {

/// Head buffer for one level, every logit very negative unless set.
struct FakeHead {
    FeatureGridSpec spec;
    int k = 1;
    std::vector<float> data;

    FakeHead(FeatureGridSpec s, int k_) : spec(s), k(k_), data(5 * k_ * s.cells(), 0.0f) {
        for (int a = 0; a < k; ++a) {
            for (std::size_t c = 0; c < spec.cells(); ++c) {
                data[(a * 5) * spec.cells() + c] = -30.0f;
            }
        }
    }

    void set(int a, int z, int y, int x, float logit, Offsets o) {
        const auto cell = spec.cell_index(z, y, x);
        data[(a * 5) * spec.cells() + cell] = logit;
        for (int c = 0; c < 4; ++c) {
            data[(a * 5 + 1 + c) * spec.cells() + cell] = static_cast<float>(o[c]);
        }
    }

    HeadView view() const { return {data, spec, k}; }
};

Detection det(double score, BoxXYZD box) {
    Detection d;
    d.score = score;
    d.box = box;
    return d;
}

}  // namespace

TEST_CASE("logistic") {
    CHECK(logistic(0.0) == 0.5);
    CHECK(logistic(800.0) == 1.0);
    CHECK(logistic(-800.0) == 0.0);
    CHECK(logistic(2.0) + logistic(-2.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("decode a single anchor-free prediction") {
    FakeHead head({4, {4, 4, 4}, 0}, 1);
    head.set(0, 2, 3, 1, 3.0f, {0.25, -0.5, 0.0, std::log(2.0)});
    const auto dets = decode(head.view(), 0.05, {16, 16, 16});
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].score == doctest::Approx(logistic(3.0)).epsilon(1e-6));
    CHECK(dets[0].box.cx == doctest::Approx(4 * 1.25));
    CHECK(dets[0].box.cy == doctest::Approx(4 * 2.5));
    CHECK(dets[0].box.cz == doctest::Approx(8.0));
    CHECK(dets[0].box.d == doctest::Approx(8.0).epsilon(1e-6));
    CHECK(dets[0].cell == Dims3{2, 3, 1});

    // Strictly below the threshold is dropped; equal is kept.
    CHECK(decode(head.view(), 0.99, {16, 16, 16}).empty());
    CHECK(decode(head.view(), logistic(3.0f), {16, 16, 16}).size() == 1);
}

TEST_CASE("decoded centroids are clipped to the crop") {
    FakeHead head({4, {2, 2, 2}, 0}, 1);
    head.set(0, 1, 1, 1, 5.0f, {10.0, -10.0, 0.0, 0.0});
    const auto dets = decode(head.view(), 0.5, {8, 8, 8});
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].box.cx == 7.0);
    CHECK(dets[0].box.cy == 0.0);
}

TEST_CASE("decode inverts encode") {
    Rng rng(21);
    for (int i = 0; i < 500; ++i) {
        const int stride = 4 << rng.uniform_int(0, 2);
        const FeatureGridSpec spec{stride, {4, 4, 4}, 0};
        const int z = static_cast<int>(rng.uniform_int(0, 3));
        const int y = static_cast<int>(rng.uniform_int(0, 3));
        const int x = static_cast<int>(rng.uniform_int(0, 3));
        const auto p = center_point(spec, z, y, x);
        const BoxXYZD g{p.x + rng.uniform(0, 3), p.y + rng.uniform(0, 3), p.z + rng.uniform(0, 3),
                        rng.uniform(3, 30)};
        FakeHead head(spec, 1);
        head.set(0, z, y, x, 4.0f, encode_offsets(g, p, stride));
        const auto dets = decode(head.view(), 0.5, {1000, 1000, 1000});
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].box.cx == doctest::Approx(g.cx).epsilon(1e-5));
        CHECK(dets[0].box.cy == doctest::Approx(g.cy).epsilon(1e-5));
        CHECK(dets[0].box.cz == doctest::Approx(g.cz).epsilon(1e-5));
        CHECK(dets[0].box.d == doctest::Approx(g.d).epsilon(1e-5));
    }
}

TEST_CASE("anchor-based decode uses the anchor diameter") {
    const std::vector<double> anchors = {3, 5, 7};
    FakeHead head({4, {2, 2, 2}, 0}, 3);
    head.set(1, 1, 1, 1, 2.0f, {0.0, 0.0, 0.0, 0.0});
    const auto dets = decode(head.view(), 0.5, {8, 8, 8}, anchors);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].anchor == 1);
    CHECK(dets[0].box.d == doctest::Approx(5.0));
    CHECK(error_code_of([&] { decode(head.view(), 0.5, {8, 8, 8}, std::vector<double>{3, 5}); }) ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("decode_crop merges levels and caps the count") {
    FakeHead l0({4, {4, 4, 4}, 0}, 1);
    FakeHead l1({8, {2, 2, 2}, 1}, 1);
    FakeHead l2({16, {1, 1, 1}, 2}, 1);
    for (int x = 0; x < 4; ++x) {
        l0.set(0, 0, 0, x, 1.0f + x, {0, 0, 0, 0});
    }
    l1.set(0, 1, 1, 1, 8.0f, {0, 0, 0, 0});
    l2.set(0, 0, 0, 0, 0.5f, {0, 0, 0, 0});
    const std::vector<HeadView> heads = {l0.view(), l1.view(), l2.view()};

    DecodeConfig cfg;
    cfg.score_thresh = 0.05;
    cfg.crop_extent = {16, 16, 16};
    cfg.max_per_crop = 3;
    const auto dets = decode_crop(heads, cfg);
    REQUIRE(dets.size() == 3);
    CHECK(dets[0].level == 1);
    CHECK(dets[1].cell == Dims3{0, 0, 3});
    CHECK(dets[0].score >= dets[1].score);
    CHECK(dets[1].score >= dets[2].score);
}

TEST_CASE("nms_3d examples") {
    const BoxXYZD b{10, 10, 10, 6};
    CHECK(nms_3d(std::vector<Detection>{det(0.9, b), det(0.8, b)}, 0.1).size() == 1);
    CHECK(nms_3d(std::vector<Detection>{det(0.9, b), det(0.8, {40, 40, 40, 6})}, 0.1).size() == 2);
    CHECK(nms_3d(std::vector<Detection>{}, 0.1).empty());
    const auto one = nms_3d(std::vector<Detection>{det(0.3, b), det(0.7, {10.5, 10, 10, 6})}, 0.1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].score == 0.7);
    CHECK(error_code_of([] { nms_3d({}, 1.5); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("nms_3d agrees with the pairwise reference") {
    Rng rng(33);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Detection> dets;
        const int n = static_cast<int>(rng.uniform_int(0, 40));
        for (int i = 0; i < n; ++i) {
            // Coarse scores force ties.
            dets.push_back(det(std::round(rng.uniform() * 10) / 10,
                               {rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(3, 15)}));
        }
        const double thresh = rng.uniform(0.05, 0.6);
        const auto got = nms_3d(dets, thresh);
        const auto want = oracle::nms_reference(dets, thresh);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].score == want[i].score);
            CHECK(got[i].box == want[i].box);
        }
        for (std::size_t i = 0; i < got.size(); ++i) {
            for (std::size_t j = i + 1; j < got.size(); ++j) {
                CHECK(oracle::cube_iou(got[i].box, got[j].box) < thresh);
            }
        }
        // Idempotent.
        CHECK(nms_3d(got, thresh).size() == got.size());
    }
}

TEST_CASE("sort_by_score is stable") {
    std::vector<Detection> dets = {det(0.5, {1, 0, 0, 1}), det(0.9, {2, 0, 0, 1}), det(0.5, {3, 0, 0, 1})};
    sort_by_score(dets);
    CHECK(dets[0].box.cx == 2);
    CHECK(dets[1].box.cx == 1);
    CHECK(dets[2].box.cx == 3);
}
