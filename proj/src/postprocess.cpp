#include "af3d/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "af3d/error.hpp"

namespace af3d {

double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void sort_by_score(std::vector<Detection>& dets) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
}

namespace {

constexpr double kMinScore = 0x1.0p-1074;
const double kMaxScore = std::nextafter(1.0, 0.0);

}  // namespace

std::vector<Detection> decode(const HeadView& head, double score_thresh, Dims3 crop_extent,
                              std::span<const double> anchor_diameters) {
    const auto& spec = head.spec;
    const int k = head.k_per_point;
    require(head.data.size() == static_cast<std::size_t>(5 * k) * spec.cells(), ErrorCode::SizeMismatch,
            "decode: head output does not match 5*K x grid");
    require(anchor_diameters.empty() || static_cast<int>(anchor_diameters.size()) == k,
            ErrorCode::InvalidArgument, "decode: anchor count does not match K");

    std::vector<Detection> dets;
    for (int z = 0; z < spec.dims.z; ++z) {
        for (int y = 0; y < spec.dims.y; ++y) {
            for (int x = 0; x < spec.dims.x; ++x) {
                const auto cell = spec.cell_index(z, y, x);
                const auto p = center_point(spec, z, y, x);
                for (int a = 0; a < k; ++a) {
                    // Saturated logits are kept strictly inside (0, 1).
                    const double score = std::clamp(logistic(head.at(a * 5, cell)), kMinScore, kMaxScore);
                    if (!(score >= score_thresh)) {
                        continue;
                    }
                    const Offsets v{head.at(a * 5 + 1, cell), head.at(a * 5 + 2, cell), head.at(a * 5 + 3, cell),
                                    head.at(a * 5 + 4, cell)};
                    BoxXYZD box = anchor_diameters.empty() ? decode_offsets(v, p, spec.stride)
                                                           : decode_anchor_offsets(v, p, anchor_diameters[a]);
                    for (int axis = 0; axis < 3; ++axis) {
                        box.set_axis(axis, std::clamp(box.axis(axis), 0.0, static_cast<double>(crop_extent[axis] - 1)));
                    }
                    if (!is_valid(box)) {
                        continue;
                    }
                    dets.push_back({score, box, spec.level, {z, y, x}, a});
                }
            }
        }
    }
    sort_by_score(dets);
    return dets;
}

std::vector<Detection> decode_crop(std::span<const HeadView> heads, const DecodeConfig& cfg,
                                   const AnchorConfig* anchors) {
    std::vector<Detection> all;
    for (std::size_t l = 0; l < heads.size(); ++l) {
        std::span<const double> diameters;
        if (anchors != nullptr) {
            diameters = anchors->diameters[std::min<std::size_t>(l, 2)];
        }
        auto dets = decode(heads[l], cfg.score_thresh, cfg.crop_extent, diameters);
        all.insert(all.end(), dets.begin(), dets.end());
    }
    sort_by_score(all);
    if (cfg.max_per_crop >= 0 && all.size() > static_cast<std::size_t>(cfg.max_per_crop)) {
        all.resize(cfg.max_per_crop);
    }
    return all;
}

std::vector<Detection> nms_3d(std::span<const Detection> dets, double iou_thresh) {
    require(iou_thresh >= 0.0 && iou_thresh <= 1.0, ErrorCode::InvalidArgument, "nms iou_thresh must be in [0, 1]");
    std::vector<Detection> sorted(dets.begin(), dets.end());
    sort_by_score(sorted);
    std::vector<Detection> kept;
    for (const auto& candidate : sorted) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return iou_cube(k.box, candidate.box) >= iou_thresh;
        });
        if (!suppressed) {
            kept.push_back(candidate);
        }
    }
    return kept;
}

}  // namespace af3d
