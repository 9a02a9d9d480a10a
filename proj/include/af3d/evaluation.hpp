#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "af3d/postprocess.hpp"
#include "af3d/volume_io.hpp"

namespace af3d {

inline constexpr std::array<double, 7> kLunaFpRates = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
inline constexpr std::array<double, 6> kWideFpRates = {0.5, 1.0, 2.0, 4.0, 8.0, 16.0};

enum class MatchKind { TruePositive, FalsePositive, Ignored };

struct DetectionMatch {
    MatchKind kind = MatchKind::FalsePositive;
    /// Ground-truth index for true positives and ignored duplicates, -1 otherwise.
    int gt = -1;
};

struct MatchResult {
    std::vector<DetectionMatch> detections;
    std::vector<bool> gt_hit;
};

/// Greedy matching in list order (callers pass detections sorted by descending score). A
/// detection hits a ground truth when its centroid lies strictly within the lesion radius;
/// the nearest unhit ground truth wins. Detections that only hit already-hit lesions are ignored.
MatchResult match_detections(std::span<const Detection> dets, std::span<const BoxXYZD> gts);

struct EvalScan {
    std::string scan_id;
    std::vector<Detection> dets;
    std::vector<Annotation> gts;
};

struct OperatingPoint {
    double threshold = 0.0;
    double fp_rate = 0.0;
    double sensitivity = 0.0;
};

struct FrocCurve {
    std::vector<double> fp_rates;
    std::vector<double> sensitivities;
    double froc_score = 0.0;
    int n_scans = 0;
    int n_lesions = 0;
    /// Every distinct score threshold, descending, after the empty operating point.
    std::vector<OperatingPoint> points;
};

/// Detections with a non-positive score are discarded. Sensitivity at rate r is the best
/// sensitivity over operating points whose FP rate does not exceed r.
FrocCurve froc(std::span<const EvalScan> scans, std::span<const double> fp_rates);

double sensitivity_at(const FrocCurve& curve, double fp_rate);

enum class GroupKey { LesionType, SizeBucket };

/// "<10", "10-30" or ">30" (mm).
std::string size_bucket(double diameter_mm);

struct GroupRow {
    std::string group;
    int n_lesions = 0;
    int n_hit = 0;
    double sensitivity = 0.0;
};

struct StratifiedReport {
    double fp_rate = 4.0;
    /// Score threshold of the global operating point at fp_rate; +inf when no point qualifies.
    double threshold = 0.0;
    std::vector<GroupRow> rows;
};

/// Per-group sensitivity at a global FP rate, using one operating threshold for all groups.
/// Unrecognised lesion types and missing metadata land in "other".
StratifiedReport stratified_report(std::span<const EvalScan> scans, GroupKey key, double fp_rate = 4.0);

}  // namespace af3d
