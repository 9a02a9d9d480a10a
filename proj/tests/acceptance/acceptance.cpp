// Acceptance suite: one PASS/FAIL line per criterion.
//
//   af3d_acceptance [--work-dir DIR] [--skip-e2e] [--only N]
//
// Criteria 8 and 9 drive the command-line tool through full synth/train/predict/eval runs
// and take roughly half an hour on one core.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "af3d/assignment.hpp"
#include "af3d/evaluation.hpp"
#include "af3d/losses.hpp"
#include "af3d/network.hpp"
#include "af3d/postprocess.hpp"
#include "af3d/rng.hpp"
#include "af3d/tiling.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace af3d;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void expect(bool ok, const std::string& what) {
        if (!ok && pass) {
            detail = what;
        }
        pass = pass && ok;
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

// ---------------------------------------------------------------------------------------------

Outcome assignment_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    Rng rng(2002);
    const int extents[] = {16, 32, 48, 64};
    AssignConfig cfg;
    int instances = 0;
    for (; instances < 500; ++instances) {
        const Dims3 crop{extents[rng.uniform_int(0, 3)], extents[rng.uniform_int(0, 3)], extents[rng.uniform_int(0, 3)]};
        const auto specs = make_grid_specs(crop);
        const auto boxes = oracle::random_boxes(rng, crop, 5, 2.0, 40.0);
        const auto grid = assign_anchor_free(boxes, specs, cfg);
        for (std::size_t l = 0; l < specs.size(); ++l) {
            const auto want = oracle::brute_force_level(boxes, specs[l], cfg);
            const auto& got = grid.levels[l];
            for (std::size_t c = 0; c < want.size(); ++c) {
                const int label = got.labels[c] == Label::Positive ? 1 : got.labels[c] == Label::Ignored ? -1 : 0;
                o.expect(label == want[c].label, "label mismatch in instance " + std::to_string(instances));
                if (label == 1 && want[c].label == 1) {
                    o.expect(std::abs(got.psi[c] - want[c].psi) <= 1e-12, "psi mismatch");
                    for (int k = 0; k < 4; ++k) {
                        o.expect(std::abs(got.offsets[c][k] - want[c].offsets[k]) <= 1e-12, "offset mismatch");
                    }
                }
            }
        }
    }
    const double t = seconds_since(t0);
    o.expect(t < 10.0, "runtime " + fmt("%.1f s", t));
    if (o.pass) {
        o.detail = std::to_string(instances) + " instances agree, " + fmt("%.2f s", t);
    }
    return o;
}

Outcome weight_and_encoding() {
    Outcome o;
    const CenterPoint origin{0, 0, 0, 0, 0, 0};
    o.expect(std::abs(gaussian_weight(origin, {0, 0, 0, 10}, 1.0) - 1.0) <= 1e-9, "psi at the centre");
    o.expect(std::abs(gaussian_weight(origin, {10, 0, 0, 10}, 1.0) - std::exp(-0.5)) <= 1e-9, "psi at distance d");
    o.expect(std::abs(gaussian_weight(origin, {3, 4, 0, 10}, 1.0) - std::exp(-0.125)) <= 1e-9, "psi at (3,4,0)");

    const CenterPoint p{2, 2, 3, 8, 8, 12};
    const auto v = encode_offsets({10, 12, 14, 8}, p, 4);
    const double want[4] = {0.5, 1.0, 0.5, std::log(2.0)};
    for (int k = 0; k < 4; ++k) {
        o.expect(std::abs(v[k] - want[k]) <= 1e-9, "encoding fixture");
    }

    Rng rng(3003);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const int stride = 4 << rng.uniform_int(0, 2);
        const int a = static_cast<int>(rng.uniform_int(0, 31));
        const int b = static_cast<int>(rng.uniform_int(0, 31));
        const int c = static_cast<int>(rng.uniform_int(0, 31));
        const CenterPoint q{a, b, c, double(stride * a), double(stride * b), double(stride * c)};
        const BoxXYZD g{rng.uniform(0, 128), rng.uniform(0, 128), rng.uniform(0, 128), rng.uniform(0.5, 60)};
        const auto back = decode_offsets(encode_offsets(g, q, stride), q, stride);
        for (int k = 0; k < 3; ++k) {
            worst = std::max(worst, std::abs(back.axis(k) - g.axis(k)));
        }
        worst = std::max(worst, std::abs(back.d - g.d));
    }
    o.expect(worst <= 1e-9, "decode(encode) error " + fmt("%.3g", worst));
    if (o.pass) {
        o.detail = "fixtures exact, max round-trip error " + fmt("%.2g", worst);
    }
    return o;
}

// Double-precision composite: network heads -> slot predictions -> losses -> head gradients.
struct Composite {
    Network<double>& net;
    Tensor5<double> input;
    LabelGrid targets;
    LossConfig loss;

    std::vector<LevelPrediction> predictions(const std::array<Tensor5<double>, 3>& heads) const {
        std::vector<LevelPrediction> preds(3);
        for (int l = 0; l < 3; ++l) {
            const std::size_t cells = heads[l].voxels();
            for (std::size_t c = 0; c < cells; ++c) {
                const auto at = [&](int ch) { return heads[l].data[ch * cells + c]; };
                preds[l].logits.push_back(at(0));
                preds[l].offsets.push_back({at(1), at(2), at(3), at(4)});
            }
        }
        return preds;
    }

    double value() {
        const auto preds = predictions(net.forward(input));
        return total_loss(classification_loss(preds, targets, loss), localization_loss(preds, targets, loss)).l_total;
    }

    void gradient() {
        const auto heads = net.forward(input);
        const auto preds = predictions(heads);
        const auto cls = classification_loss(preds, targets, loss);
        const auto loc = localization_loss(preds, targets, loss);
        std::array<Tensor5<double>, 3> grads;
        for (int l = 0; l < 3; ++l) {
            grads[l] = heads[l];
            std::fill(grads[l].data.begin(), grads[l].data.end(), 0.0);
            const std::size_t cells = heads[l].voxels();
            for (std::size_t c = 0; c < cells; ++c) {
                grads[l].data[c] = cls.grads[l][c];
                for (int k = 0; k < 4; ++k) {
                    grads[l].data[(1 + k) * cells + c] = loc.grads[l][c][k];
                }
            }
        }
        net.zero_grad();
        net.backward(grads);
    }
};

Outcome gradient_checks() {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    const LossConfig cfg;
    Rng rng(4004);
    double worst_loss = 0.0;

    for (int i = 0; i < 200; ++i) {
        double z = rng.uniform(-6, 6);
        const int y = static_cast<int>(rng.uniform_int(0, 1));
        const double analytic = focal_term_logit(z, y, cfg).grad;
        const double numeric =
            oracle::central_difference([&] { return focal_term_logit(z, y, cfg).value; }, z, 1e-6);
        worst_loss = std::max(worst_loss, oracle::relative_error(analytic, numeric, 1e-8));
    }

    for (int trial = 0; trial < 20; ++trial) {
        LabelGrid grid;
        LevelLabels level(FeatureGridSpec{4, {1, 1, 20}, 0}, 1);
        for (std::size_t c = 0; c < level.slots(); ++c) {
            const double u = rng.uniform();
            level.labels[c] = u < 0.3 ? Label::Positive : u < 0.45 ? Label::Ignored : Label::Negative;
            level.psi[c] = level.labels[c] == Label::Positive ? rng.uniform(0.1, 1.0) : 0.0;
            level.offsets[c] = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 2)};
        }
        grid.levels.push_back(level);
        std::vector<LevelPrediction> preds(1);
        for (std::size_t c = 0; c < level.slots(); ++c) {
            preds[0].logits.push_back(rng.uniform(-4, 4));
            preds[0].offsets.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-2, 3)});
        }
        const auto cls = classification_loss(preds, grid, cfg);
        const auto loc = localization_loss(preds, grid, cfg);
        for (std::size_t c = 0; c < level.slots(); ++c) {
            const double n_cls = oracle::central_difference(
                [&] { return classification_loss(preds, grid, cfg).value; }, preds[0].logits[c], 1e-6);
            worst_loss = std::max(worst_loss, oracle::relative_error(cls.grads[0][c], n_cls, 1e-8));
            for (int k = 0; k < 4; ++k) {
                const double n_loc = oracle::central_difference(
                    [&] { return localization_loss(preds, grid, cfg).value; }, preds[0].offsets[c][k], 1e-6);
                worst_loss = std::max(worst_loss, oracle::relative_error(loc.grads[0][c][k], n_loc, 1e-8));
            }
        }
        const Offsets target = level.offsets[0];
        Offsets pred = preds[0].offsets[0];
        const auto sl = smooth_l1(pred, target, 1.0);
        for (int k = 0; k < 4; ++k) {
            const double n = oracle::central_difference([&] { return smooth_l1(pred, target, 1.0).value; }, pred[k], 1e-6);
            worst_loss = std::max(worst_loss, oracle::relative_error(sl.grad[k], n, 1e-8));
        }
    }
    o.expect(worst_loss < 1e-4, "loss gradient error " + fmt("%.3g", worst_loss));

    // Full composite through a tiny network on a 16x32x32 input.
    NetworkConfig ncfg;
    ncfg.base_channels = 4;
    ncfg.blocks_per_stage = 1;
    ncfg.growth = 2;
    ncfg.head_channels = 4;
    Network<double> net(ncfg, 5);
    for (auto& p : net.params()) {
        // Zero biases would leave all-zero voxels exactly on a ReLU kink.
        if (p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0) {
            for (auto& v : p.value) {
                v += rng.uniform(-0.1, 0.1);
            }
        }
    }
    Composite comp{net, Tensor5<double>(1, 1, {16, 32, 32}), {}, cfg};
    for (auto& v : comp.input.data) {
        v = rng.uniform();
    }
    const std::vector<BoxXYZD> boxes = {{10.3, 20.7, 8.2, 6.0}, {22.5, 9.1, 7.7, 12.0}};
    comp.targets = assign_anchor_free(boxes, make_grid_specs({16, 32, 32}), AssignConfig{});
    comp.gradient();

    double worst_net = 0.0;
    int checked = 0;
    for (auto& p : net.params()) {
        for (int rep = 0; rep < 2; ++rep) {
            const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.value.size()) - 1));
            const double numeric = oracle::central_difference([&] { return comp.value(); }, p.value[i], 1e-6);
            worst_net = std::max(worst_net, oracle::relative_error(p.grad[i], numeric, 1e-7));
            ++checked;
        }
    }
    o.expect(worst_net < 1e-3, "network gradient error " + fmt("%.3g", worst_net));
    const double t = seconds_since(t0);
    o.expect(t < 120.0, "runtime " + fmt("%.1f s", t));
    if (o.pass) {
        o.detail = "loss max rel err " + fmt("%.2g", worst_loss) + ", network max rel err " + fmt("%.2g", worst_net) +
                   " over " + std::to_string(checked) + " parameters, " + fmt("%.1f s", t);
    }
    return o;
}

Outcome nms_and_froc() {
    Outcome o;
    Rng rng(5005);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Detection> dets;
        const int n = static_cast<int>(rng.uniform_int(0, 50));
        for (int i = 0; i < n; ++i) {
            Detection d;
            d.score = std::round(rng.uniform() * 20) / 20;
            d.box = {rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(3, 15)};
            dets.push_back(d);
        }
        const double thresh = rng.uniform(0.05, 0.6);
        const auto got = nms_3d(dets, thresh);
        const auto want = oracle::nms_reference(dets, thresh);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) {
            same = got[i].score == want[i].score && got[i].box == want[i].box;
        }
        o.expect(same, "NMS differs in set " + std::to_string(trial));
    }

    const std::vector<double> rates(kLunaFpRates.begin(), kLunaFpRates.end());
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<EvalScan> scans(rng.uniform_int(1, 5));
        int lesions = 0;
        for (std::size_t s = 0; s < scans.size(); ++s) {
            scans[s].scan_id = "s" + std::to_string(s);
            const int n_gt = static_cast<int>(rng.uniform_int(s == 0 ? 1 : 0, 3));
            for (int g = 0; g < n_gt; ++g) {
                scans[s].gts.push_back({scans[s].scan_id,
                                        {rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(4, 25)},
                                        {},
                                        {}});
            }
            lesions += n_gt;
            const int n_det = static_cast<int>(rng.uniform_int(0, 20));
            for (int i = 0; i < n_det; ++i) {
                Detection d;
                d.score = std::round(rng.uniform() * 20) / 20;
                d.box = {rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(4, 20)};
                if (n_gt > 0 && rng.uniform() < 0.6) {
                    const auto& g = scans[s].gts[rng.uniform_int(0, n_gt - 1)].box;
                    d.box = {g.cx + rng.uniform(-0.6, 0.6) * g.d, g.cy, g.cz, g.d};
                }
                scans[s].dets.push_back(d);
            }
            sort_by_score(scans[s].dets);
        }
        const auto curve = froc(scans, rates);
        o.expect(curve.sensitivities == oracle::froc_reference(scans, rates),
                 "FROC differs in fixture " + std::to_string(trial));
    }

    std::vector<EvalScan> scans(2);
    scans[0].gts = {{"a", {10, 10, 10, 8}, {}, {}}, {"a", {40, 40, 40, 12}, {}, {}}};
    scans[1].gts = {{"b", {20, 20, 20, 6}, {}, {}}};
    o.expect(froc(scans, rates).froc_score == 0.0, "empty detections must score 0");
    for (auto& s : scans) {
        for (const auto& g : s.gts) {
            Detection d;
            d.score = 1.0;
            d.box = g.box;
            s.dets.push_back(d);
        }
    }
    o.expect(froc(scans, rates).froc_score == 1.0, "perfect detector must score 1");
    if (o.pass) {
        o.detail = "1000 NMS sets and 200 FROC fixtures match the references; perfect 1.0, empty 0.0";
    }
    return o;
}

Outcome shape_contract() {
    Outcome o;
    Tensor5<float> input(1, 1, {64, 128, 128});
    Rng rng(6006);
    for (auto& v : input.data) {
        v = static_cast<float>(rng.uniform());
    }
    const Dims3 want[3] = {{16, 32, 32}, {8, 16, 16}, {4, 8, 8}};
    for (const int k : {1, 3}) {
        NetworkConfig cfg;
        cfg.k_per_point = k;
        Network<float> net(cfg, 1);
        const auto heads = net.forward(input);
        for (int l = 0; l < 3; ++l) {
            o.expect(heads[l].spatial() == want[l] && heads[l].channels() == 5 * k && heads[l].batch() == 1,
                     "head " + std::to_string(l) + " shape for K=" + std::to_string(k));
        }
    }
    if (o.pass) {
        o.detail = "(16,32,32)/(8,16,16)/(4,8,8) with 5 and 15 channels";
    }
    return o;
}

Outcome tiling() {
    Outcome o;
    Rng rng(7007);
    for (int trial = 0; trial < 1000; ++trial) {
        const Dims3 dims{static_cast<int>(rng.uniform_int(1, 64)), static_cast<int>(rng.uniform_int(1, 64)),
                         static_cast<int>(rng.uniform_int(1, 64))};
        Dims3 shape;
        Dims3 overlap;
        for (int a = 0; a < 3; ++a) {
            shape[a] = 16 * static_cast<int>(rng.uniform_int(1, 4));
            overlap[a] = static_cast<int>(rng.uniform_int(0, shape[a] - 1));
        }
        std::vector<char> covered(dims.count(), 0);
        for (const auto& r : sliding_windows(dims, shape, overlap)) {
            for (int z = std::max(0, r.origin.z); z < std::min(dims.z, r.origin.z + r.shape.z); ++z) {
                for (int y = std::max(0, r.origin.y); y < std::min(dims.y, r.origin.y + r.shape.y); ++y) {
                    for (int x = std::max(0, r.origin.x); x < std::min(dims.x, r.origin.x + r.shape.x); ++x) {
                        covered[(static_cast<std::size_t>(z) * dims.y + y) * dims.x + x] = 1;
                    }
                }
            }
        }
        o.expect(std::find(covered.begin(), covered.end(), 0) == covered.end(),
                 "uncovered voxel in case " + std::to_string(trial));
    }

    std::set<int> ys;
    for (const auto& r : sliding_windows({64, 200, 128}, {64, 128, 128}, {32, 32, 32})) {
        ys.insert(r.origin.y);
    }
    o.expect(ys == std::set<int>{0, 72}, "origins for extent 200");

    const auto r0 = make_region({64, 200, 128}, {0, 0, 0}, {64, 128, 128});
    const auto r1 = make_region({64, 200, 128}, {0, 72, 0}, {64, 128, 128});
    Detection a;
    a.score = 0.9;
    a.box = {20, 100, 20, 8};
    Detection b = a;
    b.score = 0.85;
    b.box.cy = 100 - 72;
    const auto merged = assemble({{r0, to_global({a}, r0, 1.0)}, {r1, to_global({b}, r1, 1.0)}}, 0.1);
    o.expect(merged.size() == 1 && merged[0].score == 0.9, "duplicate lesion not collapsed");
    if (o.pass) {
        o.detail = "1000 coverage cases, origins {0, 72}, duplicate collapsed";
    }
    return o;
}

// ---------------------------------------------------------------------------------------------
// End-to-end runs through the command-line tool.

struct E2E {
    fs::path work;
    std::string cli = AF3D_CLI_PATH;

    bool run(const std::string& args, const fs::path& log) const {
        const std::string cmd = "\"" + cli + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) && WEXITSTATUS(status) == 0;
    }

    static std::string config(const std::string& mode) {
        return R"({
  "seed": 2024,
  "mode": ")" + mode + R"(",
  "threads": 1,
  "synth": {"volume_dims": [64, 64, 64], "n_lesions": [1, 3], "diameter_range_mm": [4, 20],
            "n_train": 32, "n_val": 8, "out_dir": "data"},
  "network": {"head_bias_init": -4.595},
  "optim": {"lr": 0.01, "momentum": 0.9, "weight_decay": 0.0001, "clip_grad_norm": 10.0, "warmup_steps": 100},
  "train": {"manifest": "data/manifest.json", "out_dir": "run", "steps": 2000, "crop_shape": [64, 64, 64],
            "checkpoint_every": 500},
  "predict": {"window": [64, 64, 64], "overlap": [0, 0, 0]}
})";
    }

    /// synth -> train -> predict -> eval in `dir`; returns the 7-rate FROC score or NaN on failure.
    double pipeline(const fs::path& dir, const std::string& mode) const {
        fs::create_directories(dir);
        {
            std::ofstream(dir / "config.json") << config(mode);
        }
        const auto log = dir / "log.txt";
        const std::string cfg = "--config \"" + (dir / "config.json").string() + "\" --threads 1";
        const bool ok = run("synth " + cfg, log) && run("train " + cfg, log) &&
                        run("predict " + cfg + " --checkpoint \"" + (dir / "run" / "final.af3d").string() +
                                "\" --out \"" + (dir / "predictions.csv").string() + "\"",
                            log) &&
                        run("eval --predictions \"" + (dir / "predictions.csv").string() + "\" --annotations \"" +
                                (dir / "data" / "annotations_val.csv").string() + "\" --out-dir \"" +
                                (dir / "eval").string() + "\"",
                            log);
        if (!ok) {
            return std::nan("");
        }
        std::ifstream in(dir / "eval" / "summary.json");
        const auto j = nlohmann::json::parse(in);
        return j.at("froc_score_7rate").get<double>();
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct E2EResults {
    double af = std::nan("");
    double ab = std::nan("");
    double twin = std::nan("");
    double af_seconds = 0.0;
};

Outcome end_to_end(const E2E& e, E2EResults& r) {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    r.af = e.pipeline(e.work / "anchor_free", "anchor_free");
    r.af_seconds = seconds_since(t0);
    r.ab = e.pipeline(e.work / "anchor_based", "anchor_based");
    o.expect(!std::isnan(r.af), "anchor-free pipeline failed, see " + (e.work / "anchor_free" / "log.txt").string());
    o.expect(!std::isnan(r.ab), "anchor-based pipeline failed, see " + (e.work / "anchor_based" / "log.txt").string());
    o.expect(r.af >= 0.80, "anchor-free froc " + fmt("%.4f", r.af) + " < 0.80");
    o.expect(std::abs(r.af - r.ab) <= 0.15, "anchor-based froc " + fmt("%.4f", r.ab) + " outside +-0.15");
    o.expect(r.af_seconds <= 1800.0, "anchor-free pipeline took " + fmt("%.0f s", r.af_seconds));
    const std::string summary = "anchor-free froc " + fmt("%.4f", r.af) + " (" + fmt("%.0f s", r.af_seconds) +
                                "), anchor-based froc " + fmt("%.4f", r.ab);
    o.detail = o.pass ? summary : o.detail + "; " + summary;
    return o;
}

Outcome determinism(const E2E& e, E2EResults& r) {
    Outcome o;
    const auto first = e.work / "anchor_free";
    const auto twin = e.work / "anchor_free_twin";
    r.twin = e.pipeline(twin, "anchor_free");
    o.expect(!std::isnan(r.twin), "twin pipeline failed");
    for (const auto* name : {"run/step_00000500.af3d", "run/step_00001000.af3d", "run/final.af3d", "predictions.csv",
                             "run/train_log.csv"}) {
        const auto a = slurp(first / name);
        o.expect(!a.empty() && a == slurp(twin / name), std::string("twin runs differ in ") + name);
    }

    // Resume from the step-1000 checkpoint into a fresh directory.
    const auto resumed = e.work / "anchor_free_resume";
    fs::create_directories(resumed);
    const auto log = resumed / "log.txt";
    const bool ok = e.run("train --config \"" + (first / "config.json").string() + "\" --threads 1 --resume \"" +
                              (first / "run" / "step_00001000.af3d").string() + "\" --out-dir \"" +
                              (resumed / "run").string() + "\"",
                          log);
    o.expect(ok, "resumed training failed, see " + log.string());
    if (ok) {
        o.expect(slurp(first / "run" / "final.af3d") == slurp(resumed / "run" / "final.af3d"),
                 "resumed final checkpoint differs");
        // The resumed log only holds steps after the checkpoint; they must match the tail of the original.
        const auto full = slurp(first / "run" / "train_log.csv");
        const auto tail = slurp(resumed / "run" / "train_log.csv");
        const auto marker = full.find("\n1001,");
        const auto tail_marker = tail.find("\n1001,");
        o.expect(marker != std::string::npos && tail_marker != std::string::npos &&
                     full.substr(marker) == tail.substr(tail_marker),
                 "resumed loss trajectory differs");
    }
    if (o.pass) {
        o.detail = "twin checkpoints, logs and predictions bit-identical; resume from step 1000 reproduces final.af3d";
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string work_dir;
    bool skip_e2e = false;
    std::vector<int> only;
    app.add_option("--work-dir", work_dir, "Directory for end-to-end runs (default: a fresh temp dir)");
    app.add_flag("--skip-e2e", skip_e2e, "Skip criteria 8 and 9");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);

    auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

    int failures = 0;
    std::vector<bool> property_pass;
    auto report = [&](int n, const std::string& name, const Outcome& o) {
        std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << name << " - " << o.detail
                  << std::endl;
        failures += o.pass ? 0 : 1;
    };
    auto guarded = [](const std::function<Outcome()>& f) {
        try {
            return f();
        } catch (const std::exception& ex) {
            return Outcome{false, std::string("exception: ") + ex.what()};
        }
    };

    struct Item {
        int n;
        std::string name;
        std::function<Outcome()> run;
    };
    const std::vector<Item> properties = {
        {2, "assignment matches brute-force labeler", assignment_oracle},
        {3, "gaussian weight and offset encoding fixtures", weight_and_encoding},
        {4, "analytic gradients match finite differences", gradient_checks},
        {5, "NMS and FROC match reference implementations", nms_and_froc},
        {6, "network head shape contract", shape_contract},
        {7, "sliding-window tiling and assembly", tiling},
    };
    std::vector<std::pair<int, Outcome>> results;
    for (const auto& item : properties) {
        if (wanted(item.n)) {
            const auto o = guarded(item.run);
            results.emplace_back(item.n, o);
            report(item.n, item.name, o);
        }
    }

    fs::path work;
    bool temp_work = false;
    if (!skip_e2e && (wanted(8) || wanted(9))) {
        if (work_dir.empty()) {
            work = fs::temp_directory_path() / ("af3d_acceptance_" + std::to_string(std::chrono::steady_clock::now()
                                                                                        .time_since_epoch()
                                                                                        .count()));
            temp_work = true;
        } else {
            work = work_dir;
        }
        fs::create_directories(work);
        const E2E e{work};
        E2EResults r;
        const auto o8 = guarded([&] { return end_to_end(e, r); });
        results.emplace_back(8, o8);
        if (wanted(8)) {
            report(8, "end-to-end synthetic run", o8);
        }
        if (wanted(9)) {
            const auto o9 = guarded([&] { return determinism(e, r); });
            results.emplace_back(9, o9);
            report(9, "determinism and resume", o9);
        }
        if (temp_work && failures == 0) {
            std::error_code ec;
            fs::remove_all(work, ec);
        }
    } else {
        for (const int n : {8, 9}) {
            if (wanted(n)) {
                std::cout << "criterion " << n << ": SKIP  end-to-end runs disabled" << std::endl;
            }
        }
    }

    if (wanted(1)) {
        // Paper-scale numbers are out of reach; the substitute is every property suite plus the synthetic run.
        Outcome o1;
        for (const auto& [n, o] : results) {
            o1.expect(o.pass, "substitute criterion " + std::to_string(n) + " failed");
        }
        const bool complete = results.size() == 8;
        o1.expect(complete, "substitute criteria not all run");
        if (o1.pass) {
            o1.detail = "paper-scale tables out of scope; substitute criteria 2-8 all pass";
        }
        report(1, "substitute for paper-scale results", o1);
    }
    return failures == 0 ? 0 : 1;
}
