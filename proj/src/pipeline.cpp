#include "af3d/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "af3d/checkpoint.hpp"
#include "af3d/error.hpp"
#include "af3d/parallel.hpp"
#include "af3d/rng.hpp"
#include "af3d/synth.hpp"
#include "af3d/tiling.hpp"

namespace af3d {

namespace {

// Stream tags keep the random streams of different consumers apart.
constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamScanPick = 2;
constexpr std::uint64_t kStreamCrop = 3;

constexpr const char* kTrainLogHeader = "step,l_cls,l_loc,l_total,n_pos";

std::string format_log_row(const TrainLogRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%d", static_cast<long long>(row.step), row.loss.l_cls,
                  row.loss.l_loc, row.loss.l_total, row.loss.n_pos);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

double parse_number(const std::string& text, const std::string& what, std::size_t row) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    fail(ErrorCode::BadFormat, "prediction row " + std::to_string(row) + ": bad " + what + " '" + text + "'");
}

std::string read_text(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        fail(ErrorCode::NotFound, "file not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<TrainLogRow> read_train_log(const std::filesystem::path& path) {
    std::vector<TrainLogRow> rows;
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto f = split_csv(line);
        if (f.size() != 5) {
            continue;
        }
        TrainLogRow row;
        row.step = std::stoll(f[0]);
        row.loss = total_loss(std::stod(f[1]), std::stod(f[2]));
        row.loss.l_total = std::stod(f[3]);
        row.loss.n_pos = std::stoi(f[4]);
        rows.push_back(row);
    }
    return rows;
}

std::vector<PreparedScan> load_training_scans(const RunConfig& cfg) {
    const auto manifest = load_manifest(cfg.train.manifest);
    const auto annotations = filter_oversize(read_annotations(manifest.annotations), cfg.train.max_lesion_mm);
    require(!manifest.train.empty(), ErrorCode::Validation, "manifest has an empty train split");
    std::vector<PreparedScan> scans;
    for (const auto& id : manifest.train) {
        std::vector<Annotation> own;
        std::copy_if(annotations.begin(), annotations.end(), std::back_inserter(own),
                     [&](const Annotation& a) { return a.scan_id == id; });
        scans.push_back(prepare_scan(id, read_volume(manifest.volume_path(id)), std::move(own), cfg.preprocess));
    }
    return scans;
}

}  // namespace

PreparedScan prepare_scan(std::string scan_id, const Volume& raw, std::vector<Annotation> annotations,
                          const PreprocessConfig& cfg) {
    // Corner-aligned resampling keeps mm coordinates fixed, so annotations carry over unchanged.
    auto volume = clip_and_normalize(resample_isotropic(raw, cfg.target_spacing_mm), cfg.hu_min, cfg.hu_max);
    return {std::move(scan_id), std::move(volume), std::move(annotations)};
}

LabelGrid assign_targets(const RunConfig& cfg, std::span<const BoxXYZD> boxes_vox, Dims3 crop_dims) {
    const auto specs = make_grid_specs(crop_dims);
    return cfg.mode == Mode::AnchorFree ? assign_anchor_free(boxes_vox, specs, cfg.assign)
                                        : assign_anchor_based(boxes_vox, specs, cfg.anchors);
}

std::vector<LevelPrediction> head_predictions(const std::array<Tensor5<float>, 3>& heads, int b, int k_per_point) {
    std::vector<LevelPrediction> preds(heads.size());
    for (std::size_t l = 0; l < heads.size(); ++l) {
        const auto& h = heads[l];
        require(h.channels() == 5 * k_per_point, ErrorCode::InvalidArgument, "head channel count does not match K");
        const std::size_t cells = h.voxels();
        const float* data = h.sample(b);
        auto& p = preds[l];
        p.logits.resize(cells * k_per_point);
        p.offsets.resize(cells * k_per_point);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            for (int a = 0; a < k_per_point; ++a) {
                const std::size_t slot = cell * k_per_point + a;
                p.logits[slot] = data[(a * 5) * cells + cell];
                for (int c = 0; c < 4; ++c) {
                    p.offsets[slot][c] = data[(a * 5 + 1 + c) * cells + cell];
                }
            }
        }
    }
    return preds;
}

LossBreakdown sample_loss(const std::array<Tensor5<float>, 3>& heads, int b, const LabelGrid& targets,
                          const LossConfig& cfg, double scale, std::array<Tensor5<float>, 3>& head_grads) {
    const int k = targets.levels.front().k_per_point;
    const auto preds = head_predictions(heads, b, k);
    const auto cls = classification_loss(preds, targets, cfg);
    const auto loc = localization_loss(preds, targets, cfg);
    for (std::size_t l = 0; l < heads.size(); ++l) {
        const std::size_t cells = heads[l].voxels();
        float* g = head_grads[l].sample(b);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            for (int a = 0; a < k; ++a) {
                const std::size_t slot = cell * k + a;
                g[(a * 5) * cells + cell] += static_cast<float>(scale * cls.grads[l][slot]);
                for (int c = 0; c < 4; ++c) {
                    g[(a * 5 + 1 + c) * cells + cell] += static_cast<float>(scale * loc.grads[l][slot][c]);
                }
            }
        }
    }
    return total_loss(cls, loc);
}

std::string checkpoint_extra(const RunConfig& cfg) {
    nlohmann::json j;
    j["mode"] = to_string(cfg.mode);
    j["seed"] = cfg.seed;
    j["anchors"] = {{"diameters", cfg.anchors.diameters},
                    {"iou_pos", cfg.anchors.iou_pos},
                    {"iou_neg", cfg.anchors.iou_neg}};
    j["preprocess"] = {{"target_spacing_mm", cfg.preprocess.target_spacing_mm},
                       {"hu_min", cfg.preprocess.hu_min},
                       {"hu_max", cfg.preprocess.hu_max}};
    return j.dump();
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "step_%08lld.af3d", static_cast<long long>(step));
    return out_dir / buf;
}

TrainResult train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume, std::ostream* progress) {
    cfg.validate();
    enable_flush_to_zero();
    const auto scans = load_training_scans(cfg);
    const auto net_cfg = cfg.network_for_mode();
    const auto& out_dir = cfg.train.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    require(!ec, ErrorCode::Io, "cannot create output directory " + out_dir.string() + ": " + ec.message());

    Network<float> net(net_cfg, stream_key(cfg.seed, {kStreamInit}));
    SgdOptimizer<float> opt(cfg.optim.sgd);
    std::int64_t start = 0;
    TrainResult result;
    if (resume) {
        auto state = load_checkpoint(*resume);
        require(to_json(state.network.config()) == to_json(net_cfg), ErrorCode::Validation,
                "checkpoint network config does not match the run config: " + resume->string());
        net = std::move(state.network);
        opt.velocity() = std::move(state.optimizer.velocity());
        start = state.step;
        for (const auto& row : read_train_log(out_dir / "train_log.csv")) {
            if (row.step <= start) {
                result.log.push_back(row);
            }
        }
    }

    std::ofstream log(out_dir / "train_log.csv", std::ios::trunc);
    require(static_cast<bool>(log), ErrorCode::Io, "cannot write training log in " + out_dir.string());
    log << kTrainLogHeader << '\n';
    for (const auto& row : result.log) {
        log << format_log_row(row) << '\n';
    }
    log.flush();

    const int batch = cfg.train.batch_size;
    const Dims3 crop_dims = cfg.train.crop.shape;
    const double t = cfg.preprocess.target_spacing_mm;
    const std::string extra = checkpoint_extra(cfg);
    result.final_step = start;
    for (std::int64_t step = start; step < cfg.train.steps; ++step) {
        Tensor5<float> input(batch, 1, crop_dims);
        std::vector<LabelGrid> targets;
        for (int b = 0; b < batch; ++b) {
            Rng pick(cfg.seed, {kStreamScanPick, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)});
            const auto& scan = scans[pick.uniform_int(0, static_cast<std::int64_t>(scans.size()) - 1)];
            const auto crop = random_crop(scan.volume, scan.annotations, cfg.train.crop,
                                          stream_key(cfg.seed, {kStreamCrop, static_cast<std::uint64_t>(step),
                                                                static_cast<std::uint64_t>(b)}));
            std::copy(crop.voxels.begin(), crop.voxels.end(), input.sample(b));
            std::vector<BoxXYZD> boxes_vox;
            for (const auto& box : crop.boxes) {
                boxes_vox.push_back({box.cx / t, box.cy / t, box.cz / t, box.d / t});
            }
            targets.push_back(assign_targets(cfg, boxes_vox, crop_dims));
        }

        const auto heads = net.forward(input);
        std::array<Tensor5<float>, 3> head_grads;
        for (std::size_t l = 0; l < heads.size(); ++l) {
            head_grads[l] = Tensor5<float>(batch, heads[l].channels(), heads[l].spatial());
        }
        LossBreakdown loss;
        for (int b = 0; b < batch; ++b) {
            const auto s = sample_loss(heads, b, targets[b], cfg.loss, 1.0 / batch, head_grads);
            loss.l_cls += s.l_cls / batch;
            loss.l_loc += s.l_loc / batch;
            loss.n_pos += s.n_pos;
            loss.n_neg += s.n_neg;
        }
        loss.l_total = loss.l_cls + loss.l_loc;
        if (!std::isfinite(loss.l_total)) {
            fail(ErrorCode::Numeric, "non-finite loss at step " + std::to_string(step + 1) +
                                         "; last good checkpoint is the latest file in " + out_dir.string());
        }

        net.zero_grad();
        net.backward(head_grads);
        if (cfg.optim.clip_grad_norm > 0.0) {
            clip_grad_norm(net.params(), cfg.optim.clip_grad_norm);
        }
        const double warm = cfg.optim.warmup_steps > 0
                                ? std::min(1.0, static_cast<double>(step + 1) / cfg.optim.warmup_steps)
                                : 1.0;
        opt.config().lr = cfg.optim.sgd.lr * warm;
        try {
            opt.step(net.params());
        } catch (const Error& e) {
            fail(ErrorCode::Numeric, std::string(e.what()) + " at step " + std::to_string(step + 1));
        }

        const std::int64_t done = step + 1;
        result.final_step = done;
        result.log.push_back({done, loss});
        if (done % cfg.train.log_every == 0 || done == cfg.train.steps) {
            log << format_log_row(result.log.back()) << '\n';
            log.flush();
        }
        if (progress != nullptr && (done % 100 == 0 || done == cfg.train.steps)) {
            *progress << "step " << done << " l_total " << loss.l_total << " n_pos " << loss.n_pos << '\n';
        }
        if (done % cfg.train.checkpoint_every == 0 || done == cfg.train.steps) {
            opt.config().lr = cfg.optim.sgd.lr;
            save_checkpoint(net, opt, done, checkpoint_path(out_dir, done), extra);
        }
    }
    opt.config().lr = cfg.optim.sgd.lr;
    result.checkpoint = out_dir / "final.af3d";
    save_checkpoint(net, opt, result.final_step, result.checkpoint, extra);
    return result;
}

std::vector<Detection> predict_volume(Network<float>& net, const Volume& volume, const RunConfig& cfg) {
    enable_flush_to_zero();
    const double t = volume.spacing.x;
    const auto& p = cfg.predict;
    const int k = net.config().k_per_point;
    const AnchorConfig* anchors = k > 1 ? &cfg.anchors : nullptr;
    const auto specs = make_grid_specs(p.window);
    DecodeConfig decode_cfg{p.score_thresh, p.max_per_crop, p.window};

    std::vector<std::pair<CropRegion, std::vector<Detection>>> per_crop;
    for (const auto& region : sliding_windows(volume.dims, p.window, p.overlap)) {
        Tensor5<float> input(1, 1, region.shape);
        const auto voxels = extract_region(volume, region);
        std::copy(voxels.begin(), voxels.end(), input.data.begin());
        const auto heads = net.forward(input);
        std::array<HeadView, 3> views;
        for (int l = 0; l < 3; ++l) {
            views[l] = HeadView{std::span<const float>(heads[l].data), specs[l], k};
        }
        auto dets = decode_crop(views, decode_cfg, anchors);
        for (auto& d : dets) {
            d.box = {d.box.cx * t, d.box.cy * t, d.box.cz * t, d.box.d * t};
        }
        per_crop.emplace_back(region, to_global(dets, region, t));
    }
    return assemble(per_crop, p.nms_iou);
}

std::string predictions_csv(std::vector<ScanDetections> scans) {
    std::stable_sort(scans.begin(), scans.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string out = std::string(kPredictionHeader) + "\n";
    char buf[256];
    for (auto& [id, dets] : scans) {
        sort_by_score(dets);
        for (const auto& d : dets) {
            std::snprintf(buf, sizeof(buf), ",%.4f,%.4f,%.4f,%.4f,%.9g\n", d.box.cx, d.box.cy, d.box.cz, d.box.d,
                          d.score);
            out += id;
            out += buf;
        }
    }
    return out;
}

void write_predictions(const std::vector<ScanDetections>& scans, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write predictions: " + path.string());
    out << predictions_csv(scans);
    require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path.string());
}

std::vector<ScanDetections> parse_predictions(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::BadFormat, "prediction file is empty");
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    require(line == kPredictionHeader, ErrorCode::BadFormat,
            "prediction header must be '" + std::string(kPredictionHeader) + "'");
    std::map<std::string, std::vector<Detection>> by_scan;
    std::vector<std::string> order;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv(line);
        require(f.size() == 6, ErrorCode::BadFormat,
                "prediction row " + std::to_string(row) + ": expected 6 fields, got " + std::to_string(f.size()));
        Detection d;
        d.box = {parse_number(f[1], "x_mm", row), parse_number(f[2], "y_mm", row), parse_number(f[3], "z_mm", row),
                 parse_number(f[4], "diameter_mm", row)};
        d.score = parse_number(f[5], "score", row);
        if (!by_scan.contains(f[0])) {
            order.push_back(f[0]);
        }
        by_scan[f[0]].push_back(d);
    }
    std::vector<ScanDetections> out;
    for (const auto& id : order) {
        out.emplace_back(id, std::move(by_scan[id]));
    }
    return out;
}

std::vector<ScanDetections> read_predictions(const std::filesystem::path& path) {
    return parse_predictions(read_text(path));
}

}  // namespace af3d
