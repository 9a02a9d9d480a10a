#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "af3d/config.hpp"
#include "af3d/evaluation.hpp"
#include "af3d/losses.hpp"
#include "af3d/network.hpp"

namespace af3d {

/// A scan resampled to the working spacing and intensity-normalised to [0, 1].
struct PreparedScan {
    std::string scan_id;
    Volume volume;
    std::vector<Annotation> annotations;
};

PreparedScan prepare_scan(std::string scan_id, const Volume& raw, std::vector<Annotation> annotations,
                          const PreprocessConfig& cfg);

/// Targets for one crop, with boxes given in crop-local voxel units.
LabelGrid assign_targets(const RunConfig& cfg, std::span<const BoxXYZD> boxes_vox, Dims3 crop_dims);

/// Slices raw head outputs of sample b into slot-aligned predictions (slot = cell * K + anchor).
std::vector<LevelPrediction> head_predictions(const std::array<Tensor5<float>, 3>& heads, int b, int k_per_point);

/// Loss and head-output gradients for one sample; gradients are added into `head_grads` scaled by `scale`.
LossBreakdown sample_loss(const std::array<Tensor5<float>, 3>& heads, int b, const LabelGrid& targets,
                          const LossConfig& cfg, double scale, std::array<Tensor5<float>, 3>& head_grads);

struct TrainLogRow {
    std::int64_t step = 0;
    LossBreakdown loss;
};

struct TrainResult {
    std::int64_t final_step = 0;
    std::filesystem::path checkpoint;
    std::vector<TrainLogRow> log;
};

/// Checkpoint header fields that do not depend on output paths.
std::string checkpoint_extra(const RunConfig& cfg);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step);

/// Runs (or resumes) the training loop described by cfg.train. Writes train_log.csv, periodic
/// checkpoints and final.af3d into cfg.train.out_dir. A non-finite loss aborts with a Numeric
/// error; checkpoints written before that point are left in place.
TrainResult train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume, std::ostream* progress);

/// Sliding-window detection over a prepared scan; boxes are returned in volume mm.
std::vector<Detection> predict_volume(Network<float>& net, const Volume& volume, const RunConfig& cfg);

using ScanDetections = std::pair<std::string, std::vector<Detection>>;

inline constexpr const char* kPredictionHeader = "scan_id,x_mm,y_mm,z_mm,diameter_mm,score";

/// Rows sorted by scan id, then descending score.
std::string predictions_csv(std::vector<ScanDetections> scans);
void write_predictions(const std::vector<ScanDetections>& scans, const std::filesystem::path& path);
std::vector<ScanDetections> read_predictions(const std::filesystem::path& path);
std::vector<ScanDetections> parse_predictions(const std::string& text);

}  // namespace af3d
