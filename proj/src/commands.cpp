#include "af3d/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include <json.hpp>

#include "af3d/checkpoint.hpp"
#include "af3d/error.hpp"
#include "af3d/parallel.hpp"
#include "af3d/synth.hpp"

namespace af3d {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
    out << text;
    require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path.string());
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

double mean_over(const FrocCurve& curve, std::span<const double> rates) {
    double sum = 0.0;
    for (const double r : rates) {
        sum += sensitivity_at(curve, r);
    }
    return sum / static_cast<double>(rates.size());
}

nlohmann::json report_json(const StratifiedReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"group", r.group}, {"n_lesions", r.n_lesions}, {"n_hit", r.n_hit},
                        {"sensitivity", r.sensitivity}});
    }
    return rows;
}

}  // namespace

RunConfig resolve_config(const CommonOptions& opts) {
    RunConfig cfg = opts.config ? load_run_config(*opts.config) : RunConfig{};
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.synth.seed = *opts.seed;
    }
    if (opts.threads) {
        cfg.threads = *opts.threads;
    }
    if (opts.mode) {
        cfg.mode = *opts.mode;
    }
    cfg.validate();
    set_thread_count(cfg.threads);
    return cfg;
}

std::filesystem::path cmd_synth(const RunConfig& cfg, std::ostream& out) {
    generate_dataset(cfg.synth, cfg.synth_n_train, cfg.synth_n_val, cfg.synth_out_dir);
    const auto manifest = cfg.synth_out_dir / "manifest.json";
    out << manifest.string() << '\n';
    return manifest;
}

TrainResult cmd_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume, std::ostream& out) {
    require(!cfg.train.manifest.empty(), ErrorCode::Config, "train.manifest is not set");
    std::error_code ec;
    require(std::filesystem::is_regular_file(cfg.train.manifest, ec), ErrorCode::NotFound,
            "manifest not found: " + cfg.train.manifest.string());
    auto result = train(cfg, resume, &out);
    out << result.checkpoint.string() << '\n';
    return result;
}

int cmd_predict(const RunConfig& cfg, const PredictOptions& opts, std::ostream& out, std::ostream& err) {
    auto state = load_checkpoint(opts.checkpoint);
    auto& net = state.network;
    require(net.config().k_per_point == cfg.network_for_mode().k_per_point, ErrorCode::Validation,
            "checkpoint predicts K=" + std::to_string(net.config().k_per_point) + " per point but mode " +
                to_string(cfg.mode) + " needs K=" + std::to_string(cfg.network_for_mode().k_per_point));

    std::vector<std::pair<std::string, std::filesystem::path>> inputs;
    if (opts.volumes.empty()) {
        require(!cfg.train.manifest.empty(), ErrorCode::Config, "no volumes given and train.manifest is not set");
        const auto manifest = load_manifest(cfg.train.manifest);
        require(opts.split == "train" || opts.split == "val", ErrorCode::InvalidArgument,
                "split must be train or val, got '" + opts.split + "'");
        for (const auto& id : opts.split == "train" ? manifest.train : manifest.val) {
            inputs.emplace_back(id, manifest.volume_path(id));
        }
    } else {
        for (const auto& path : opts.volumes) {
            inputs.emplace_back(path.stem().string(), path);
        }
    }

    std::vector<ScanDetections> results;
    int failures = 0;
    for (const auto& [id, path] : inputs) {
        try {
            const auto scan = prepare_scan(id, read_volume(path), {}, cfg.preprocess);
            results.emplace_back(id, predict_volume(net, scan.volume, cfg));
        } catch (const Error& e) {
            ++failures;
            err << "warning[" << to_string(e.code()) << "]: skipping " << path.string() << ": " << e.what() << '\n';
        }
    }
    write_predictions(results, opts.out);
    out << opts.out.string() << '\n';
    return failures;
}

EvalSummary cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
    const auto predictions = read_predictions(opts.predictions);
    const auto annotations = read_annotations(opts.annotations);

    EvalSummary summary;
    std::vector<EvalScan> scans;
    std::map<std::string, std::size_t> index;
    for (const auto& a : annotations) {
        auto [it, inserted] = index.emplace(a.scan_id, scans.size());
        if (inserted) {
            scans.push_back({a.scan_id, {}, {}});
        }
        scans[it->second].gts.push_back(a);
    }
    std::set<std::string> predicted;
    for (const auto& [id, dets] : predictions) {
        predicted.insert(id);
        const auto it = index.find(id);
        if (it == index.end()) {
            summary.warnings.push_back("predictions for scan '" + id + "' have no annotations; scan excluded");
            continue;
        }
        auto& target = scans[it->second].dets;
        target.insert(target.end(), dets.begin(), dets.end());
    }
    for (const auto& s : scans) {
        if (!predicted.contains(s.scan_id)) {
            summary.warnings.push_back("annotated scan '" + s.scan_id + "' has no predictions");
        }
    }
    for (const auto& w : summary.warnings) {
        err << "warning: " << w << '\n';
    }

    const std::span<const double> rates =
        opts.wide_rates ? std::span<const double>(kWideFpRates) : std::span<const double>(kLunaFpRates);
    summary.curve = froc(scans, rates);
    summary.froc_7rate = mean_over(summary.curve, kLunaFpRates);
    summary.avg_6rate = mean_over(summary.curve, kWideFpRates);

    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    require(!ec, ErrorCode::Io, "cannot create " + opts.out_dir.string() + ": " + ec.message());

    std::string table = "fp_rate,sensitivity\n";
    nlohmann::json per_rate = nlohmann::json::array();
    for (std::size_t i = 0; i < summary.curve.fp_rates.size(); ++i) {
        table += fmt(summary.curve.fp_rates[i]) + "," + fmt(summary.curve.sensitivities[i]) + "\n";
        per_rate.push_back({{"fp_rate", summary.curve.fp_rates[i]}, {"sensitivity", summary.curve.sensitivities[i]}});
    }
    write_file(opts.out_dir / "froc.csv", table);

    nlohmann::json j;
    j["froc_score"] = summary.curve.froc_score;
    j["rate_set"] = opts.wide_rates ? "wide" : "luna16";
    j["froc_score_7rate"] = summary.froc_7rate;
    j["avg_sensitivity_6rate"] = summary.avg_6rate;
    j["per_rate"] = per_rate;
    j["n_scans"] = summary.curve.n_scans;
    j["n_lesions"] = summary.curve.n_lesions;
    j["warnings"] = summary.warnings;

    const bool has_types = std::any_of(annotations.begin(), annotations.end(),
                                       [](const Annotation& a) { return a.lesion_type.has_value(); });
    const auto by_size = stratified_report(scans, GroupKey::SizeBucket);
    std::string strat = "group_key,group,n_lesions,n_hit,sensitivity\n";
    auto add_rows = [&](const char* key, const StratifiedReport& report) {
        for (const auto& r : report.rows) {
            strat += std::string(key) + "," + r.group + "," + std::to_string(r.n_lesions) + "," +
                     std::to_string(r.n_hit) + "," + fmt(r.sensitivity) + "\n";
        }
    };
    j["per_group"]["size_bucket"] = report_json(by_size);
    add_rows("size_bucket", by_size);
    if (has_types) {
        const auto by_type = stratified_report(scans, GroupKey::LesionType);
        j["per_group"]["lesion_type"] = report_json(by_type);
        add_rows("lesion_type", by_type);
    }
    j["per_group"]["fp_rate"] = by_size.fp_rate;
    write_file(opts.out_dir / "stratified.csv", strat);
    write_file(opts.out_dir / "summary.json", j.dump(2) + "\n");

    if (opts.plot_data) {
        std::string plot = "threshold,fp_rate,sensitivity\n";
        for (const auto& p : summary.curve.points) {
            plot += (std::isinf(p.threshold) ? std::string("inf") : fmt(p.threshold)) + "," + fmt(p.fp_rate) + "," +
                    fmt(p.sensitivity) + "\n";
        }
        write_file(opts.out_dir / "froc_points.csv", plot);
    }
    out << "froc_score " << fmt(summary.curve.froc_score) << '\n';
    return summary;
}

void cmd_assign_dump(const RunConfig& cfg, const AssignDumpOptions& opts, std::ostream& out) {
    const auto annotations = read_annotations(opts.annotations);
    const double t = cfg.preprocess.target_spacing_mm;
    std::vector<BoxXYZD> boxes;
    for (const auto& a : annotations) {
        boxes.push_back({a.box.cx / t, a.box.cy / t, a.box.cz / t, a.box.d / t});
    }
    const auto grid = assign_targets(cfg, boxes, opts.crop);
    write_file(opts.out, label_grid_csv(grid));
    out << opts.out.string() << '\n';
}

}  // namespace af3d
