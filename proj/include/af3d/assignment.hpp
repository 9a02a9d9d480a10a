#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "af3d/geometry.hpp"

namespace af3d {

inline constexpr std::array<int, 3> kLevelStrides = {4, 8, 16};

/// One feature map of the detector: grid dims are crop dims divided by the stride.
struct FeatureGridSpec {
    int stride = 4;
    Dims3 dims;
    int level = 0;

    std::size_t cells() const { return dims.count(); }
    std::size_t cell_index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * dims.y + y) * dims.x + x;
    }
};

/// Feature grids for a crop; every crop dimension must be divisible by the coarsest stride.
std::vector<FeatureGridSpec> make_grid_specs(Dims3 crop_dims);

/// Grid location; (i, j, k) index the x, y, z axes and position = stride * index.
struct CenterPoint {
    int i = 0;
    int j = 0;
    int k = 0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

CenterPoint center_point(const FeatureGridSpec& spec, int z, int y, int x);

/// All points of a grid, z slowest.
std::vector<CenterPoint> grid_points(const FeatureGridSpec& spec);

struct AssignConfig {
    double eps_p = 0.8;
    double eps_n = 1.2;
    double alpha_gauss = 1.0;
    /// Diameter cut-offs (mm) between levels 0/1 and 1/2.
    double c1 = 8.5;
    double c2 = 19.5;

    void validate() const;
};

struct AnchorConfig {
    std::array<std::vector<double>, 3> diameters = {{{3.0, 5.0, 7.0}, {10.0, 13.0, 17.0}, {22.0, 30.0, 40.0}}};
    double iou_pos = 0.5;
    double iou_neg = 0.1;

    int k_per_point() const { return static_cast<int>(diameters[0].size()); }
    void validate() const;
};

enum class Label : std::int8_t { Negative = 0, Positive = 1, Ignored = -1 };

std::string to_string(Label label);

using Offsets = std::array<double, 4>;

/// Targets for one level. Slot s = cell * k_per_point + anchor.
struct LevelLabels {
    FeatureGridSpec spec;
    int k_per_point = 1;
    std::vector<Label> labels;
    std::vector<double> psi;
    std::vector<Offsets> offsets;
    std::vector<int> matched;

    LevelLabels() = default;
    LevelLabels(const FeatureGridSpec& s, int k);

    std::size_t slots() const { return labels.size(); }
};

struct LabelGrid {
    std::vector<LevelLabels> levels;

    int count(Label label) const;
};

int select_scale(const BoxXYZD& box, const AssignConfig& cfg);

double gaussian_weight(const CenterPoint& p, const BoxXYZD& g, double alpha);

/// Stride-normalised centroid offsets and log-diameter: (dx, dy, dz, dd).
Offsets encode_offsets(const BoxXYZD& g, const CenterPoint& p, int stride);
BoxXYZD decode_offsets(const Offsets& v, const CenterPoint& p, int stride);

/// Anchor-relative variants: offsets divided by the anchor diameter.
Offsets encode_anchor_offsets(const BoxXYZD& g, const CenterPoint& p, double anchor_d);
BoxXYZD decode_anchor_offsets(const Offsets& v, const CenterPoint& p, double anchor_d);

double iou_cube(const BoxXYZD& a, const BoxXYZD& b);

double center_distance(const BoxXYZD& a, const BoxXYZD& b);

LabelGrid assign_anchor_free(std::span<const BoxXYZD> boxes, std::span<const FeatureGridSpec> specs,
                             const AssignConfig& cfg);

LabelGrid assign_anchor_based(std::span<const BoxXYZD> boxes, std::span<const FeatureGridSpec> specs,
                              const AnchorConfig& cfg);

/// Rows of `level,i,j,k,label,psi,dx,dy,dz,dd`; anchor-based grids add an `anchor` column.
std::string label_grid_csv(const LabelGrid& grid);

}  // namespace af3d
