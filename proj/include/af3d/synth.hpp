#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "af3d/volume_io.hpp"

namespace af3d {

/// Synthetic CT-like scans: smooth background, Gaussian noise and soft-edged spherical lesions.
/// Intensities are generated on a [0, 1] scale and stored as HU = -1024 + 3072 * value, so the
/// default intensity window maps them straight back.
struct SynthConfig {
    Dims3 volume_dims{64, 64, 64};
    double spacing_mm = 1.0;
    int n_lesions_min = 1;
    int n_lesions_max = 3;
    double d_min_mm = 3.0;
    double d_max_mm = 24.0;
    double lesion_contrast = 0.35;
    double noise_sigma = 0.05;
    /// Shortest wavelength (mm) of the background modulation.
    double background_texture_scale = 24.0;
    double background_level = 0.3;
    double background_amplitude = 0.08;
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr double kSynthHuOffset = -1024.0;
inline constexpr double kSynthHuScale = 3072.0;

std::string synth_scan_id(int index);

/// Deterministic in (cfg.seed, index).
std::pair<Volume, std::vector<Annotation>> generate_volume(const SynthConfig& cfg, int index);

struct Manifest {
    std::filesystem::path root;
    std::vector<std::string> train;
    std::vector<std::string> val;
    /// scan id -> volume path (absolute after load).
    std::vector<std::pair<std::string, std::filesystem::path>> files;
    std::filesystem::path annotations;

    std::filesystem::path volume_path(const std::string& scan_id) const;
};

/// Writes volumes/<id>.vol3, annotations.csv (all scans), annotations_train.csv,
/// annotations_val.csv and manifest.json. Train ids use indices [0, n_train), val ids the next n_val.
Manifest generate_dataset(const SynthConfig& cfg, int n_train, int n_val, const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& path);

}  // namespace af3d
