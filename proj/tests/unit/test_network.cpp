#include <doctest.h>

#include <cmath>
#include <cstring>

#include "af3d/checkpoint.hpp"
#include "af3d/network.hpp"
#include "af3d/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace af3d;
using testutil::error_code_of;

namespace {

NetworkConfig tiny_config(int k = 1) {
    NetworkConfig cfg;
    cfg.base_channels = 4;
    cfg.blocks_per_stage = 1;
    cfg.growth = 2;
    cfg.head_channels = 4;
    cfg.k_per_point = k;
    return cfg;
}

template <typename T>
Tensor5<T> random_input(int batch, Dims3 dims, std::uint64_t seed) {
    Rng rng(seed);
    Tensor5<T> t(batch, 1, dims);
    for (auto& v : t.data) {
        v = static_cast<T>(rng.uniform());
    }
    return t;
}

/// Fixed random weights turning the head outputs into a scalar.
struct Probe {
    std::array<Tensor5<double>, 3> weights;

    Probe(const std::array<Tensor5<double>, 3>& heads, std::uint64_t seed) {
        Rng rng(seed);
        for (int l = 0; l < 3; ++l) {
            weights[l] = heads[l];
            for (auto& w : weights[l].data) {
                w = rng.uniform(-1, 1);
            }
        }
    }

    double value(const std::array<Tensor5<double>, 3>& heads) const {
        double s = 0.0;
        for (int l = 0; l < 3; ++l) {
            for (std::size_t i = 0; i < heads[l].data.size(); ++i) {
                s += weights[l].data[i] * heads[l].data[i];
            }
        }
        return s;
    }
};

}  // namespace

TEST_CASE("forward output shapes") {
    for (const int k : {1, 3}) {
        Network<float> net(tiny_config(k), 1);
        const auto heads = net.forward(random_input<float>(2, {32, 48, 64}, 2));
        const int strides[3] = {4, 8, 16};
        for (int l = 0; l < 3; ++l) {
            CHECK(heads[l].batch() == 2);
            CHECK(heads[l].channels() == 5 * k);
            CHECK(heads[l].spatial() == Dims3{32 / strides[l], 48 / strides[l], 64 / strides[l]});
        }
    }
    Network<float> net(tiny_config(), 1);
    CHECK(error_code_of([&] { net.forward(random_input<float>(1, {32, 32, 40}, 1)); }) == ErrorCode::SizeMismatch);
}

TEST_CASE("parameter count matches the closed form") {
    for (const int k : {1, 3}) {
        for (const auto& cfg : {tiny_config(k), [&] {
                                    NetworkConfig c;
                                    c.k_per_point = k;
                                    return c;
                                }()}) {
            Network<float> net(cfg, 0);
            std::size_t summed = 0;
            for (const auto& p : net.params()) {
                std::size_t n = 1;
                for (const int d : p.shape) {
                    n *= d;
                }
                CHECK(n == p.value.size());
                summed += n;
            }
            CHECK(summed == net.parameter_count());
            CHECK(summed == expected_parameter_count(cfg));
        }
    }
    // Default desk-scale network stays small.
    CHECK(expected_parameter_count(NetworkConfig{}) < 1'000'000);
}

TEST_CASE("initialisation is seeded") {
    Network<float> a(tiny_config(), 7);
    Network<float> b(tiny_config(), 7);
    Network<float> c(tiny_config(), 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].value == b.params()[i].value);
        any_diff = any_diff || a.params()[i].value != c.params()[i].value;
    }
    CHECK(any_diff);
}

TEST_CASE("backward before forward is a state error") {
    Network<float> net(tiny_config(), 1);
    std::array<Tensor5<float>, 3> grads;
    CHECK(error_code_of([&] { net.backward(grads); }) == ErrorCode::State);
}

TEST_CASE("gradients match central differences") {
    Network<double> net(tiny_config(), 3);
    // Zero-initialised biases put voxels with all-zero input exactly on a ReLU kink.
    Rng jitter(7);
    for (auto& p : net.params()) {
        if (p.name.ends_with(".bias")) {
            for (auto& v : p.value) {
                v += jitter.uniform(-0.1, 0.1);
            }
        }
    }
    const auto input = random_input<double>(2, {16, 16, 32}, 4);
    auto heads = net.forward(input);
    const Probe probe(heads, 5);
    net.zero_grad();
    net.backward(probe.weights);

    Rng rng(6);
    int checked = 0;
    for (auto& p : net.params()) {
        // Two entries per parameter tensor.
        for (int rep = 0; rep < 2; ++rep) {
            const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.value.size()) - 1));
            const double numeric =
                oracle::central_difference([&] { return probe.value(net.forward(input)); }, p.value[i], 1e-5);
            INFO(p.name << "[" << i << "]");
            CHECK(oracle::relative_error(p.grad[i], numeric, 1e-6) < 1e-4);
            ++checked;
        }
    }
    CHECK(checked == 2 * static_cast<int>(net.params().size()));
}

TEST_CASE("batch items are independent and gradients add up") {
    Network<double> net(tiny_config(), 9);
    const auto both = random_input<double>(2, {16, 16, 16}, 10);
    Tensor5<double> first(1, 1, {16, 16, 16});
    Tensor5<double> second(1, 1, {16, 16, 16});
    const auto n = first.data.size();
    std::copy(both.data.begin(), both.data.begin() + n, first.data.begin());
    std::copy(both.data.begin() + n, both.data.end(), second.data.begin());

    const auto h_both = net.forward(both);
    const auto h_first = net.forward(first);
    for (int l = 0; l < 3; ++l) {
        const auto per = h_first[l].data.size();
        for (std::size_t i = 0; i < per; ++i) {
            CHECK(h_both[l].data[i] == doctest::Approx(h_first[l].data[i]).epsilon(1e-12));
        }
    }

    const Probe probe(h_both, 11);
    auto split = [&](int which) {
        std::array<Tensor5<double>, 3> g;
        for (int l = 0; l < 3; ++l) {
            g[l] = h_first[l];
            const auto per = g[l].data.size();
            std::copy(probe.weights[l].data.begin() + which * per, probe.weights[l].data.begin() + (which + 1) * per,
                      g[l].data.begin());
        }
        return g;
    };

    net.zero_grad();
    net.forward(both);
    net.backward(probe.weights);
    std::vector<std::vector<double>> joint;
    for (const auto& p : net.params()) {
        joint.push_back(p.grad);
    }

    net.zero_grad();
    net.forward(first);
    net.backward(split(0));
    net.forward(second);
    net.backward(split(1));
    for (std::size_t j = 0; j < joint.size(); ++j) {
        for (std::size_t i = 0; i < joint[j].size(); ++i) {
            CHECK(oracle::relative_error(net.params()[j].grad[i], joint[j][i], 1e-9) < 1e-8);
        }
    }
}

TEST_CASE("SGD with momentum and weight decay") {
    std::vector<Param<double>> params(1);
    params[0].name = "w";
    params[0].shape = {2};
    params[0].value = {1.0, -2.0};
    params[0].grad = {0.5, 0.25};

    SUBCASE("lr zero leaves parameters unchanged") {
        SgdOptimizer<double> opt({0.0, 0.9, 1e-4});
        opt.step(params);
        CHECK(params[0].value == std::vector<double>{1.0, -2.0});
    }
    SUBCASE("matches the hand recurrence") {
        const SgdConfig cfg{0.1, 0.9, 0.01};
        SgdOptimizer<double> opt(cfg);
        double p = 1.0;
        double v = 0.0;
        for (int step = 0; step < 5; ++step) {
            params[0].grad = {0.5, 0.25};
            opt.step(params);
            v = cfg.momentum * v + (0.5 + cfg.weight_decay * p);
            p -= cfg.lr * v;
            CHECK(params[0].value[0] == doctest::Approx(p).epsilon(1e-14));
        }
    }
    SUBCASE("non-finite gradient is rejected by name") {
        params[0].grad[1] = std::nan("");
        SgdOptimizer<double> opt;
        std::string message;
        CHECK(error_code_of([&] { opt.step(params); }, &message) == ErrorCode::Numeric);
        CHECK(message.find("w") != std::string::npos);
        CHECK(params[0].value == std::vector<double>{1.0, -2.0});
    }
}

TEST_CASE("clip_grad_norm") {
    std::vector<Param<double>> params(2);
    params[0].grad = {3.0};
    params[1].grad = {4.0};
    CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(5.0));
    CHECK(params[0].grad[0] == 3.0);
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(params[0].grad[0] == doctest::Approx(0.6));
    CHECK(params[1].grad[0] == doctest::Approx(0.8));
}

TEST_CASE("checkpoint round trip") {
    testutil::TempDir dir("net");
    Network<float> net(tiny_config(3), 12);
    SgdOptimizer<float> opt;
    for (auto& p : net.params()) {
        std::fill(p.grad.begin(), p.grad.end(), 0.01f);
    }
    opt.step(net.params());
    save_checkpoint(net, opt, 42, dir / "c.af3d", R"({"mode":"anchor_based"})");

    const auto state = load_checkpoint(dir / "c.af3d");
    CHECK(state.step == 42);
    CHECK(state.network.config().k_per_point == 3);
    REQUIRE(state.network.params().size() == net.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        CHECK(state.network.params()[i].name == net.params()[i].name);
        CHECK(state.network.params()[i].value == net.params()[i].value);
        CHECK(state.optimizer.velocity()[i] == opt.velocity()[i]);
    }
    CHECK(read_checkpoint_config(dir / "c.af3d").find("anchor_based") != std::string::npos);

    // Identical inputs give identical bytes.
    save_checkpoint(state.network, state.optimizer, 42, dir / "d.af3d", R"({"mode":"anchor_based"})");
    CHECK(testutil::read_text(dir / "c.af3d") == testutil::read_text(dir / "d.af3d"));

    auto bytes = testutil::read_text(dir / "c.af3d");
    std::memcpy(bytes.data(), "NOPE", 4);
    testutil::write_text(dir / "bad.af3d", bytes);
    CHECK(error_code_of([&] { load_checkpoint(dir / "bad.af3d"); }) == ErrorCode::BadFormat);
    CHECK(error_code_of([&] { load_checkpoint(dir / "none.af3d"); }) == ErrorCode::NotFound);
}
