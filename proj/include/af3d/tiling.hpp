#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "af3d/postprocess.hpp"
#include "af3d/volume_io.hpp"

namespace af3d {

/// A crop window in volume voxel indices. `origin` may be negative when the window hangs
/// over the low face; pad_lo/pad_hi count the zero-filled voxels on each face.
struct CropRegion {
    Dims3 origin{0, 0, 0};
    Dims3 shape{64, 128, 128};
    Dims3 pad_lo{0, 0, 0};
    Dims3 pad_hi{0, 0, 0};

    friend bool operator==(const CropRegion&, const CropRegion&) = default;
};

CropRegion make_region(Dims3 volume_dims, Dims3 origin, Dims3 shape);

struct Crop {
    CropRegion region;
    std::vector<float> voxels;
    /// Boxes in crop-local mm.
    std::vector<BoxXYZD> boxes;
    /// Index of each box in the annotation list given to random_crop.
    std::vector<int> source;
};

/// Extracts the region, zero-filling anything outside the volume.
std::vector<float> extract_region(const Volume& volume, const CropRegion& region);

struct RandomCropConfig {
    Dims3 shape{64, 128, 128};
    double p_lesion = 0.7;
};

Crop random_crop(const Volume& volume, const std::vector<Annotation>& annotations, const RandomCropConfig& cfg,
                 std::uint64_t rng_seed);

/// Overlapping windows covering every voxel; the last window per axis ends flush with the volume.
std::vector<CropRegion> sliding_windows(Dims3 volume_dims, Dims3 shape, Dims3 overlap);

/// Shifts crop-local detections into volume mm coordinates.
std::vector<Detection> to_global(const std::vector<Detection>& dets, const CropRegion& region, double spacing_mm);

/// Concatenates already-global per-crop detections and applies global NMS.
std::vector<Detection> assemble(const std::vector<std::pair<CropRegion, std::vector<Detection>>>& per_crop,
                                double nms_iou);

}  // namespace af3d
