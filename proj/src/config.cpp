#include "af3d/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "af3d/error.hpp"

namespace af3d {

using nlohmann::json;

namespace {

std::string join_key(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

/// Reads keys from one JSON object and rejects whatever was not consumed.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path, std::filesystem::path base_dir = {})
        : j_(j), path_(std::move(path)), base_dir_(std::move(base_dir)) {
        require(j_.is_object(), ErrorCode::Config,
                "config key '" + (path_.empty() ? std::string("<root>") : path_) + "' must be an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string key_path(const std::string& key) const { return join_key(path_, key); }

    void get(const std::string& key, double& out) {
        if (const auto* v = find(key)) {
            expect(v->is_number(), key, "a number");
            out = v->get<double>();
        }
    }

    void get(const std::string& key, int& out) {
        if (const auto* v = find(key)) {
            expect(v->is_number_integer(), key, "an integer");
            out = v->get<int>();
        }
    }

    void get(const std::string& key, std::uint64_t& out) {
        if (const auto* v = find(key)) {
            expect(v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0), key,
                   "a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }

    void get(const std::string& key, std::string& out) {
        if (const auto* v = find(key)) {
            expect(v->is_string(), key, "a string");
            out = v->get<std::string>();
        }
    }

    void get_path(const std::string& key, std::filesystem::path& out) {
        if (const auto* v = find(key)) {
            expect(v->is_string(), key, "a string");
            std::filesystem::path p = v->get<std::string>();
            out = p.is_relative() && !base_dir_.empty() ? base_dir_ / p : p;
        }
    }

    void get(const std::string& key, Dims3& out) {
        if (const auto* v = find(key)) {
            expect(v->is_array() && v->size() == 3 && std::all_of(v->begin(), v->end(), [](const json& e) {
                       return e.is_number_integer();
                   }),
                   key, "an array of 3 integers [z, y, x]");
            out = {(*v)[0].get<int>(), (*v)[1].get<int>(), (*v)[2].get<int>()};
        }
    }

    template <typename T>
    void get_pair(const std::string& key, T& first, T& second) {
        if (const auto* v = find(key)) {
            expect(v->is_array() && v->size() == 2 && (*v)[0].is_number() && (*v)[1].is_number(), key,
                   "an array of 2 numbers");
            first = (*v)[0].get<T>();
            second = (*v)[1].get<T>();
        }
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) {
                fail(ErrorCode::Config, "unknown config key '" + join_key(path_, key) + "'");
            }
        }
    }

private:
    void expect(bool ok, const std::string& key, const std::string& what) const {
        require(ok, ErrorCode::Config, "config key '" + join_key(path_, key) + "' must be " + what);
    }

    const json& j_;
    std::string path_;
    std::filesystem::path base_dir_;
    std::set<std::string> seen_;
};

json dims_json(const Dims3& d) { return json::array({d.z, d.y, d.x}); }

NormMode parse_norm(const std::string& text, const std::string& key) {
    if (text == "instance") {
        return NormMode::Instance;
    }
    if (text == "fixed") {
        return NormMode::Fixed;
    }
    fail(ErrorCode::Config, "config key '" + key + "' must be \"instance\" or \"fixed\", got \"" + text + "\"");
}

void read_network(ObjectReader& r, NetworkConfig& cfg) {
    r.get("base_channels", cfg.base_channels);
    r.get("blocks_per_stage", cfg.blocks_per_stage);
    r.get("growth", cfg.growth);
    r.get("head_channels", cfg.head_channels);
    r.get("k_per_point", cfg.k_per_point);
    std::string norm;
    r.get("norm", norm);
    if (!norm.empty()) {
        cfg.norm = parse_norm(norm, r.key_path("norm"));
    }
    r.get("head_bias_init", cfg.head_bias_init);
}

void read_synth(ObjectReader& r, RunConfig& cfg) {
    auto& s = cfg.synth;
    r.get("volume_dims", s.volume_dims);
    r.get("spacing_mm", s.spacing_mm);
    r.get_pair("n_lesions", s.n_lesions_min, s.n_lesions_max);
    r.get_pair("diameter_range_mm", s.d_min_mm, s.d_max_mm);
    r.get("lesion_contrast", s.lesion_contrast);
    r.get("noise_sigma", s.noise_sigma);
    r.get("background_texture_scale", s.background_texture_scale);
    r.get("background_level", s.background_level);
    r.get("background_amplitude", s.background_amplitude);
    r.get("n_train", cfg.synth_n_train);
    r.get("n_val", cfg.synth_n_val);
    r.get_path("out_dir", cfg.synth_out_dir);
}

void read_anchors(ObjectReader& r, AnchorConfig& cfg) {
    if (const auto* v = r.find("diameters")) {
        const auto key = r.key_path("diameters");
        require(v->is_array() && v->size() == 3, ErrorCode::Config,
                "config key '" + key + "' must be an array of 3 per-level diameter lists");
        for (std::size_t l = 0; l < 3; ++l) {
            const auto& level = (*v)[l];
            require(level.is_array() && std::all_of(level.begin(), level.end(),
                                                    [](const json& e) { return e.is_number(); }),
                    ErrorCode::Config, "config key '" + key + "' level " + std::to_string(l) + " must list numbers");
            cfg.diameters[l] = level.get<std::vector<double>>();
        }
    }
    r.get("iou_pos", cfg.iou_pos);
    r.get("iou_neg", cfg.iou_neg);
}

}  // namespace

std::string to_string(Mode mode) { return mode == Mode::AnchorFree ? "anchor_free" : "anchor_based"; }

Mode parse_mode(const std::string& text) {
    if (text == "anchor_free") {
        return Mode::AnchorFree;
    }
    if (text == "anchor_based") {
        return Mode::AnchorBased;
    }
    fail(ErrorCode::Config, "mode must be anchor_free or anchor_based, got \"" + text + "\"");
}

NetworkConfig RunConfig::network_for_mode() const {
    NetworkConfig out = network;
    out.k_per_point = mode == Mode::AnchorFree ? 1 : anchors.k_per_point();
    return out;
}

void RunConfig::validate() const {
    require(threads >= 1, ErrorCode::Validation, "threads must be >= 1");
    require(synth_n_train >= 0 && synth_n_val >= 0, ErrorCode::Validation, "synth split sizes must be >= 0");
    assign.validate();
    anchors.validate();
    loss.validate();
    network.validate();
    if (mode == Mode::AnchorFree) {
        require(network.k_per_point == 1, ErrorCode::Validation, "anchor_free mode requires network.k_per_point = 1");
    } else {
        require(network.k_per_point == 1 || network.k_per_point == anchors.k_per_point(), ErrorCode::Validation,
                "anchor_based mode requires network.k_per_point to match the anchor count");
    }
    const auto& sgd = optim.sgd;
    require(sgd.lr > 0.0 && sgd.momentum >= 0.0 && sgd.momentum < 1.0 && sgd.weight_decay >= 0.0,
            ErrorCode::Validation, "optim requires lr > 0, 0 <= momentum < 1, weight_decay >= 0");
    require(optim.clip_grad_norm >= 0.0 && optim.warmup_steps >= 0, ErrorCode::Validation,
            "optim.clip_grad_norm and optim.warmup_steps must be >= 0");
    require(train.steps >= 0 && train.batch_size >= 1, ErrorCode::Validation,
            "train.steps must be >= 0 and train.batch_size >= 1");
    require(train.checkpoint_every >= 1 && train.log_every >= 1, ErrorCode::Validation,
            "train.checkpoint_every and train.log_every must be >= 1");
    require(train.crop.p_lesion >= 0.0 && train.crop.p_lesion <= 1.0, ErrorCode::Validation,
            "train.p_lesion must be in [0, 1]");
    require(train.max_lesion_mm > 0.0, ErrorCode::Validation, "train.max_lesion_mm must be > 0");
    for (int a = 0; a < 3; ++a) {
        require(train.crop.shape[a] >= 16 && train.crop.shape[a] % 16 == 0, ErrorCode::Validation,
                "train.crop_shape dims must be positive multiples of 16");
        require(predict.window[a] >= 16 && predict.window[a] % 16 == 0, ErrorCode::Validation,
                "predict.window dims must be positive multiples of 16");
        require(predict.overlap[a] >= 0 && predict.overlap[a] < predict.window[a], ErrorCode::Validation,
                "predict.overlap must be in [0, window)");
    }
    require(preprocess.target_spacing_mm > 0.0, ErrorCode::Validation, "preprocess.target_spacing_mm must be > 0");
    require(preprocess.hu_min < preprocess.hu_max, ErrorCode::Validation, "preprocess requires hu_min < hu_max");
    require(predict.score_thresh >= 0.0 && predict.score_thresh <= 1.0, ErrorCode::Validation,
            "predict.score_thresh must be in [0, 1]");
    require(predict.max_per_crop >= 1, ErrorCode::Validation, "predict.max_per_crop must be >= 1");
    require(predict.nms_iou >= 0.0 && predict.nms_iou <= 1.0, ErrorCode::Validation,
            "predict.nms_iou must be in [0, 1]");
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    ObjectReader root(j, "", base_dir);
    std::string mode;
    root.get("mode", mode);
    if (!mode.empty()) {
        cfg.mode = parse_mode(mode);
    }
    root.get("seed", cfg.seed);
    root.get("threads", cfg.threads);

    if (const auto* v = root.find("synth")) {
        ObjectReader r(*v, "synth", base_dir);
        read_synth(r, cfg);
        r.finish();
    }
    if (const auto* v = root.find("assign")) {
        ObjectReader r(*v, "assign");
        r.get("eps_p", cfg.assign.eps_p);
        r.get("eps_n", cfg.assign.eps_n);
        r.get("alpha_gauss", cfg.assign.alpha_gauss);
        r.get("c1", cfg.assign.c1);
        r.get("c2", cfg.assign.c2);
        r.finish();
    }
    if (const auto* v = root.find("anchors")) {
        ObjectReader r(*v, "anchors");
        read_anchors(r, cfg.anchors);
        r.finish();
    }
    if (const auto* v = root.find("loss")) {
        ObjectReader r(*v, "loss");
        r.get("alpha_focal", cfg.loss.alpha_focal);
        r.get("gamma", cfg.loss.gamma);
        r.get("smooth_l1_beta", cfg.loss.smooth_l1_beta);
        r.finish();
    }
    if (const auto* v = root.find("network")) {
        ObjectReader r(*v, "network");
        read_network(r, cfg.network);
        r.finish();
    }
    if (const auto* v = root.find("optim")) {
        ObjectReader r(*v, "optim");
        r.get("lr", cfg.optim.sgd.lr);
        r.get("momentum", cfg.optim.sgd.momentum);
        r.get("weight_decay", cfg.optim.sgd.weight_decay);
        r.get("clip_grad_norm", cfg.optim.clip_grad_norm);
        r.get("warmup_steps", cfg.optim.warmup_steps);
        r.finish();
    }
    if (const auto* v = root.find("train")) {
        ObjectReader r(*v, "train", base_dir);
        r.get_path("manifest", cfg.train.manifest);
        r.get_path("out_dir", cfg.train.out_dir);
        r.get("steps", cfg.train.steps);
        r.get("batch_size", cfg.train.batch_size);
        r.get("crop_shape", cfg.train.crop.shape);
        r.get("p_lesion", cfg.train.crop.p_lesion);
        r.get("max_lesion_mm", cfg.train.max_lesion_mm);
        r.get("checkpoint_every", cfg.train.checkpoint_every);
        r.get("log_every", cfg.train.log_every);
        r.finish();
    }
    if (const auto* v = root.find("preprocess")) {
        ObjectReader r(*v, "preprocess");
        r.get("target_spacing_mm", cfg.preprocess.target_spacing_mm);
        r.get("hu_min", cfg.preprocess.hu_min);
        r.get("hu_max", cfg.preprocess.hu_max);
        r.finish();
    }
    if (const auto* v = root.find("predict")) {
        ObjectReader r(*v, "predict");
        r.get("window", cfg.predict.window);
        r.get("overlap", cfg.predict.overlap);
        r.get("score_thresh", cfg.predict.score_thresh);
        r.get("max_per_crop", cfg.predict.max_per_crop);
        r.get("nms_iou", cfg.predict.nms_iou);
        r.finish();
    }
    root.finish();
    cfg.synth.seed = cfg.seed;

    // Defaults are relative to the config file as well; the manifest defaults to the synth output.
    if (cfg.train.manifest.empty()) {
        cfg.train.manifest = cfg.synth_out_dir / "manifest.json";
    }
    if (!base_dir.empty()) {
        for (auto* p : {&cfg.synth_out_dir, &cfg.train.out_dir, &cfg.train.manifest}) {
            if (p->is_relative()) {
                *p = base_dir / *p;
            }
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        fail(ErrorCode::NotFound, "config not found: " + path.string());
    }
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        fail(ErrorCode::Config, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

json to_json(const NetworkConfig& cfg) {
    return {{"base_channels", cfg.base_channels},
            {"blocks_per_stage", cfg.blocks_per_stage},
            {"growth", cfg.growth},
            {"head_channels", cfg.head_channels},
            {"k_per_point", cfg.k_per_point},
            {"norm", cfg.norm == NormMode::Instance ? "instance" : "fixed"},
            {"head_bias_init", cfg.head_bias_init}};
}

NetworkConfig network_config_from_json(const json& j) {
    NetworkConfig cfg;
    ObjectReader r(j, "network");
    read_network(r, cfg);
    r.finish();
    cfg.validate();
    return cfg;
}

json to_json(const SynthConfig& cfg) {
    return {{"volume_dims", dims_json(cfg.volume_dims)},
            {"spacing_mm", cfg.spacing_mm},
            {"n_lesions", {cfg.n_lesions_min, cfg.n_lesions_max}},
            {"diameter_range_mm", {cfg.d_min_mm, cfg.d_max_mm}},
            {"lesion_contrast", cfg.lesion_contrast},
            {"noise_sigma", cfg.noise_sigma},
            {"background_texture_scale", cfg.background_texture_scale},
            {"background_level", cfg.background_level},
            {"background_amplitude", cfg.background_amplitude}};
}

json to_json(const RunConfig& cfg) {
    json synth = to_json(cfg.synth);
    synth["n_train"] = cfg.synth_n_train;
    synth["n_val"] = cfg.synth_n_val;
    synth["out_dir"] = cfg.synth_out_dir.string();
    return {{"mode", to_string(cfg.mode)},
            {"seed", cfg.seed},
            {"threads", cfg.threads},
            {"synth", synth},
            {"assign",
             {{"eps_p", cfg.assign.eps_p},
              {"eps_n", cfg.assign.eps_n},
              {"alpha_gauss", cfg.assign.alpha_gauss},
              {"c1", cfg.assign.c1},
              {"c2", cfg.assign.c2}}},
            {"anchors",
             {{"diameters", cfg.anchors.diameters}, {"iou_pos", cfg.anchors.iou_pos}, {"iou_neg", cfg.anchors.iou_neg}}},
            {"loss",
             {{"alpha_focal", cfg.loss.alpha_focal},
              {"gamma", cfg.loss.gamma},
              {"smooth_l1_beta", cfg.loss.smooth_l1_beta}}},
            {"network", to_json(cfg.network)},
            {"optim",
             {{"lr", cfg.optim.sgd.lr},
              {"momentum", cfg.optim.sgd.momentum},
              {"weight_decay", cfg.optim.sgd.weight_decay},
              {"clip_grad_norm", cfg.optim.clip_grad_norm},
              {"warmup_steps", cfg.optim.warmup_steps}}},
            {"train",
             {{"manifest", cfg.train.manifest.string()},
              {"out_dir", cfg.train.out_dir.string()},
              {"steps", cfg.train.steps},
              {"batch_size", cfg.train.batch_size},
              {"crop_shape", dims_json(cfg.train.crop.shape)},
              {"p_lesion", cfg.train.crop.p_lesion},
              {"max_lesion_mm", cfg.train.max_lesion_mm},
              {"checkpoint_every", cfg.train.checkpoint_every},
              {"log_every", cfg.train.log_every}}},
            {"preprocess",
             {{"target_spacing_mm", cfg.preprocess.target_spacing_mm},
              {"hu_min", cfg.preprocess.hu_min},
              {"hu_max", cfg.preprocess.hu_max}}},
            {"predict",
             {{"window", dims_json(cfg.predict.window)},
              {"overlap", dims_json(cfg.predict.overlap)},
              {"score_thresh", cfg.predict.score_thresh},
              {"max_per_crop", cfg.predict.max_per_crop},
              {"nms_iou", cfg.predict.nms_iou}}}};
}

}  // namespace af3d
