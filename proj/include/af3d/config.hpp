#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "af3d/assignment.hpp"
#include "af3d/losses.hpp"
#include "af3d/network.hpp"
#include "af3d/synth.hpp"
#include "af3d/tiling.hpp"

namespace af3d {

enum class Mode { AnchorFree, AnchorBased };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct PreprocessConfig {
    double target_spacing_mm = 1.0;
    double hu_min = -1024.0;
    double hu_max = 2048.0;
};

struct OptimConfig {
    SgdConfig sgd;
    /// Global gradient-norm clip; 0 disables.
    double clip_grad_norm = 0.0;
    /// Linear learning-rate ramp over the first steps.
    int warmup_steps = 0;
};

struct TrainConfig {
    std::filesystem::path manifest;
    std::filesystem::path out_dir = "run";
    int steps = 2000;
    int batch_size = 1;
    RandomCropConfig crop{{64, 128, 128}, 0.7};
    double max_lesion_mm = 48.0;
    int checkpoint_every = 500;
    int log_every = 1;
};

struct PredictConfig {
    Dims3 window{64, 128, 128};
    Dims3 overlap{32, 32, 32};
    double score_thresh = 0.05;
    int max_per_crop = 200;
    double nms_iou = 0.1;
};

struct RunConfig {
    Mode mode = Mode::AnchorFree;
    std::uint64_t seed = 0;
    int threads = 1;
    SynthConfig synth;
    int synth_n_train = 2;
    int synth_n_val = 1;
    std::filesystem::path synth_out_dir = "data";
    AssignConfig assign;
    AnchorConfig anchors;
    LossConfig loss;
    NetworkConfig network;
    OptimConfig optim;
    TrainConfig train;
    PreprocessConfig preprocess;
    PredictConfig predict;

    /// Network config with K matching the mode.
    NetworkConfig network_for_mode() const;
    void validate() const;
};

/// Parses a strict JSON config. Unknown keys are rejected with an error naming the key path.
/// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace af3d
