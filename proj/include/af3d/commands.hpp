#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "af3d/config.hpp"
#include "af3d/evaluation.hpp"
#include "af3d/pipeline.hpp"

namespace af3d {

/// Command-line overrides applied on top of the config file.
struct CommonOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<Mode> mode;
};

/// Loads the config (defaults when no file is given), applies overrides, validates and sets
/// the worker thread count.
RunConfig resolve_config(const CommonOptions& opts);

/// Returns the manifest path.
std::filesystem::path cmd_synth(const RunConfig& cfg, std::ostream& out);

TrainResult cmd_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume, std::ostream& out);

struct PredictOptions {
    std::filesystem::path checkpoint;
    /// Explicit volume files; scan ids are the file stems. Empty means the manifest's val split.
    std::vector<std::filesystem::path> volumes;
    std::string split = "val";
    std::filesystem::path out = "predictions.csv";
};

/// Returns the number of volumes that could not be processed; they are reported on `err`.
int cmd_predict(const RunConfig& cfg, const PredictOptions& opts, std::ostream& out, std::ostream& err);

struct EvalOptions {
    std::filesystem::path predictions;
    std::filesystem::path annotations;
    std::filesystem::path out_dir = "eval";
    /// Use {0.5, 1, 2, 4, 8, 16} instead of the seven rates from 1/8 to 8.
    bool wide_rates = false;
    bool plot_data = false;
};

struct EvalSummary {
    FrocCurve curve;
    double froc_7rate = 0.0;
    double avg_6rate = 0.0;
    std::vector<std::string> warnings;
};

EvalSummary cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);

struct AssignDumpOptions {
    /// Annotation CSV with boxes in crop-local mm; scan ids are ignored.
    std::filesystem::path annotations;
    Dims3 crop{64, 128, 128};
    std::filesystem::path out = "labels.csv";
};

void cmd_assign_dump(const RunConfig& cfg, const AssignDumpOptions& opts, std::ostream& out);

}  // namespace af3d
