#pragma once

#include <span>
#include <vector>

#include "af3d/assignment.hpp"

namespace af3d {

struct Detection {
    double score = 0.0;
    BoxXYZD box;
    int level = 0;
    Dims3 cell{0, 0, 0};
    int anchor = 0;
};

/// Raw head output for one sample at one level: 5*K channels, channel-major over the grid.
struct HeadView {
    std::span<const float> data;
    FeatureGridSpec spec;
    int k_per_point = 1;

    float at(int channel, std::size_t cell) const { return data[channel * spec.cells() + cell]; }
};

struct DecodeConfig {
    double score_thresh = 0.05;
    int max_per_crop = 200;
    /// Centroids are clipped to [0, extent - 1] per axis (crop-local voxel units).
    Dims3 crop_extent{64, 128, 128};
};

/// Decodes every slot whose score clears the threshold; `anchor_diameters` empty means anchor-free.
std::vector<Detection> decode(const HeadView& head, double score_thresh, Dims3 crop_extent,
                              std::span<const double> anchor_diameters = {});

/// Decodes all levels of one crop, sorts by score and keeps at most cfg.max_per_crop.
std::vector<Detection> decode_crop(std::span<const HeadView> heads, const DecodeConfig& cfg,
                                   const AnchorConfig* anchors = nullptr);

/// Greedy suppression in descending score order; a candidate is dropped when its IoU with
/// any kept detection reaches iou_thresh.
std::vector<Detection> nms_3d(std::span<const Detection> dets, double iou_thresh);

/// Stable descending-score order; equal scores keep their input order.
void sort_by_score(std::vector<Detection>& dets);

double logistic(double x);

}  // namespace af3d
