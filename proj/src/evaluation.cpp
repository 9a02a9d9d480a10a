#include "af3d/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "af3d/error.hpp"

namespace af3d {

namespace {

constexpr std::array<const char*, 8> kKnownTypes = {"LU", "ME", "LV", "ST", "PV", "AB", "KD", "BN"};

std::vector<BoxXYZD> boxes_of(const std::vector<Annotation>& gts) {
    std::vector<BoxXYZD> out;
    out.reserve(gts.size());
    for (const auto& g : gts) {
        out.push_back(g.box);
    }
    return out;
}

std::vector<Detection> scored(const std::vector<Detection>& dets) {
    std::vector<Detection> out;
    std::copy_if(dets.begin(), dets.end(), std::back_inserter(out), [](const Detection& d) { return d.score > 0.0; });
    sort_by_score(out);
    return out;
}

std::string group_of(const Annotation& a, GroupKey key) {
    if (key == GroupKey::SizeBucket) {
        return size_bucket(a.box.d);
    }
    if (a.lesion_type && std::find(kKnownTypes.begin(), kKnownTypes.end(), *a.lesion_type) != kKnownTypes.end()) {
        return *a.lesion_type;
    }
    return "other";
}

}  // namespace

MatchResult match_detections(std::span<const Detection> dets, std::span<const BoxXYZD> gts) {
    MatchResult result;
    result.detections.resize(dets.size());
    result.gt_hit.assign(gts.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        int best_free = -1;
        double best_free_dist = std::numeric_limits<double>::infinity();
        int any_hit = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double dist = center_distance(dets[i].box, gts[g]);
            if (!(dist < gts[g].d / 2.0)) {
                continue;
            }
            if (result.gt_hit[g]) {
                if (any_hit < 0) {
                    any_hit = static_cast<int>(g);
                }
            } else if (dist < best_free_dist) {
                best_free_dist = dist;
                best_free = static_cast<int>(g);
            }
        }
        if (best_free >= 0) {
            result.detections[i] = {MatchKind::TruePositive, best_free};
            result.gt_hit[best_free] = true;
        } else if (any_hit >= 0) {
            result.detections[i] = {MatchKind::Ignored, any_hit};
        } else {
            result.detections[i] = {MatchKind::FalsePositive, -1};
        }
    }
    return result;
}

FrocCurve froc(std::span<const EvalScan> scans, std::span<const double> fp_rates) {
    require(!scans.empty(), ErrorCode::InvalidArgument, "FROC needs at least one scan");
    FrocCurve curve;
    curve.n_scans = static_cast<int>(scans.size());
    for (const auto& s : scans) {
        curve.n_lesions += static_cast<int>(s.gts.size());
    }
    require(curve.n_lesions > 0, ErrorCode::InvalidArgument, "FROC needs at least one ground-truth lesion");

    // Greedy matching is prefix-consistent, so one pass per scan labels every threshold.
    struct Event {
        double score;
        MatchKind kind;
    };
    std::vector<Event> events;
    for (const auto& s : scans) {
        const auto dets = scored(s.dets);
        const auto gts = boxes_of(s.gts);
        const auto m = match_detections(dets, gts);
        for (std::size_t i = 0; i < dets.size(); ++i) {
            events.push_back({dets[i].score, m.detections[i].kind});
        }
    }
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.score > b.score; });

    const double n_scans = curve.n_scans;
    const double n_lesions = curve.n_lesions;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    long tp = 0;
    long fp = 0;
    for (std::size_t i = 0; i < events.size();) {
        const double threshold = events[i].score;
        for (; i < events.size() && events[i].score == threshold; ++i) {
            tp += events[i].kind == MatchKind::TruePositive;
            fp += events[i].kind == MatchKind::FalsePositive;
        }
        curve.points.push_back({threshold, fp / n_scans, tp / n_lesions});
    }

    curve.fp_rates.assign(fp_rates.begin(), fp_rates.end());
    double total = 0.0;
    for (const double r : curve.fp_rates) {
        curve.sensitivities.push_back(sensitivity_at(curve, r));
        total += curve.sensitivities.back();
    }
    curve.froc_score = curve.fp_rates.empty() ? 0.0 : total / static_cast<double>(curve.fp_rates.size());
    return curve;
}

double sensitivity_at(const FrocCurve& curve, double fp_rate) {
    double best = 0.0;
    for (const auto& p : curve.points) {
        if (p.fp_rate <= fp_rate) {
            best = std::max(best, p.sensitivity);
        }
    }
    return best;
}

std::string size_bucket(double diameter_mm) {
    if (diameter_mm < 10.0) {
        return "<10";
    }
    return diameter_mm <= 30.0 ? "10-30" : ">30";
}

StratifiedReport stratified_report(std::span<const EvalScan> scans, GroupKey key, double fp_rate) {
    const std::array<double, 1> rates = {fp_rate};
    const auto curve = froc(scans, rates);
    StratifiedReport report;
    report.fp_rate = fp_rate;
    report.threshold = std::numeric_limits<double>::infinity();
    double best = -1.0;
    for (const auto& p : curve.points) {
        if (p.fp_rate <= fp_rate && p.sensitivity > best) {
            best = p.sensitivity;
            report.threshold = p.threshold;
        }
    }

    std::map<std::string, GroupRow> rows;
    for (const auto& s : scans) {
        std::vector<Detection> kept;
        for (const auto& d : scored(s.dets)) {
            if (d.score >= report.threshold) {
                kept.push_back(d);
            }
        }
        const auto gts = boxes_of(s.gts);
        const auto m = match_detections(kept, gts);
        for (std::size_t g = 0; g < s.gts.size(); ++g) {
            auto& row = rows[group_of(s.gts[g], key)];
            row.n_lesions += 1;
            row.n_hit += m.gt_hit[g] ? 1 : 0;
        }
    }
    for (auto& [name, row] : rows) {
        row.group = name;
        row.sensitivity = row.n_lesions > 0 ? static_cast<double>(row.n_hit) / row.n_lesions : 0.0;
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace af3d
