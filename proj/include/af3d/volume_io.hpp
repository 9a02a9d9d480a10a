#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "af3d/geometry.hpp"

namespace af3d {

/// Dense scalar volume, row-major with z slowest and x fastest.
struct Volume {
    Dims3 dims;
    Spacing3 spacing;
    Spacing3 origin{0.0, 0.0, 0.0};
    std::vector<float> voxels;

    Volume() = default;
    Volume(Dims3 d, Spacing3 s, float fill = 0.0f);

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * dims.y + y) * dims.x + x;
    }
    float at(int z, int y, int x) const { return voxels[index(z, y, x)]; }
    float& at(int z, int y, int x) { return voxels[index(z, y, x)]; }

    /// Throws Validation when the dims/spacing/payload invariants do not hold.
    void validate() const;
};

struct Annotation {
    std::string scan_id;
    BoxXYZD box;
    std::optional<std::string> lesion_type;
    std::optional<double> key_slice_z;
};

// VOL3 file format: 40-byte little-endian header followed by f32 voxels.
inline constexpr std::size_t kVol3HeaderBytes = 40;
inline constexpr std::uint32_t kVol3Version = 1;

Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& volume, const std::filesystem::path& path);

/// Trilinear resampling onto an isotropic grid of the given spacing.
Volume resample_isotropic(const Volume& volume, double target_spacing_mm);

/// Clamps to [hu_min, hu_max] and maps affinely onto [0, 1].
Volume clip_and_normalize(const Volume& volume, double hu_min = -1024.0, double hu_max = 2048.0);

inline constexpr const char* kAnnotationHeader = "scan_id,x_mm,y_mm,z_mm,diameter_mm,lesion_type,key_slice_z";

std::vector<Annotation> read_annotations(const std::filesystem::path& path);
std::vector<Annotation> parse_annotations(const std::string& text);
void write_annotations(const std::vector<Annotation>& annotations, const std::filesystem::path& path);

/// Turns a key-slice rectangle into a centroid/diameter box; d is the mean side length.
BoxXYZD convert_2d_annotation(double x_min, double y_min, double x_max, double y_max, double key_slice_z);

/// Keeps exactly the annotations with d < max_d_mm.
std::vector<Annotation> filter_oversize(const std::vector<Annotation>& annotations, double max_d_mm = 48.0);

}  // namespace af3d
