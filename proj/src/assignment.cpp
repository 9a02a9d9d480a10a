#include "af3d/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "af3d/error.hpp"

namespace af3d {

std::vector<FeatureGridSpec> make_grid_specs(Dims3 crop_dims) {
    std::vector<FeatureGridSpec> specs;
    for (int level = 0; level < static_cast<int>(kLevelStrides.size()); ++level) {
        const int s = kLevelStrides[level];
        for (int a = 0; a < 3; ++a) {
            require(crop_dims[a] >= s && crop_dims[a] % s == 0, ErrorCode::InvalidArgument,
                    "crop dims must be positive multiples of " + std::to_string(kLevelStrides.back()));
        }
        specs.push_back({s, {crop_dims.z / s, crop_dims.y / s, crop_dims.x / s}, level});
    }
    return specs;
}

CenterPoint center_point(const FeatureGridSpec& spec, int z, int y, int x) {
    const double s = spec.stride;
    return {x, y, z, s * x, s * y, s * z};
}

std::vector<CenterPoint> grid_points(const FeatureGridSpec& spec) {
    std::vector<CenterPoint> points;
    points.reserve(spec.cells());
    for (int z = 0; z < spec.dims.z; ++z) {
        for (int y = 0; y < spec.dims.y; ++y) {
            for (int x = 0; x < spec.dims.x; ++x) {
                points.push_back(center_point(spec, z, y, x));
            }
        }
    }
    return points;
}

void AssignConfig::validate() const {
    require(eps_p > 0.0 && eps_p <= eps_n, ErrorCode::Validation, "assignment requires 0 < eps_p <= eps_n");
    require(alpha_gauss > 0.0, ErrorCode::Validation, "alpha_gauss must be > 0");
    require(c1 > 0.0 && c1 < c2, ErrorCode::Validation, "scale cut-offs require 0 < c1 < c2");
}

void AnchorConfig::validate() const {
    const auto k = diameters[0].size();
    require(k >= 1, ErrorCode::Validation, "at least one anchor per level is required");
    for (const auto& level : diameters) {
        require(level.size() == k, ErrorCode::Validation, "every level needs the same anchor count");
        for (std::size_t a = 0; a < level.size(); ++a) {
            require(level[a] > 0.0, ErrorCode::Validation, "anchor diameters must be > 0");
            require(a == 0 || level[a] > level[a - 1], ErrorCode::Validation,
                    "anchor diameters must be ascending per level");
        }
    }
    require(iou_neg >= 0.0 && iou_neg < iou_pos && iou_pos <= 1.0, ErrorCode::Validation,
            "anchor thresholds require 0 <= iou_neg < iou_pos <= 1");
}

std::string to_string(Label label) {
    switch (label) {
        case Label::Positive: return "positive";
        case Label::Negative: return "negative";
        case Label::Ignored: return "ignored";
    }
    return "?";
}

LevelLabels::LevelLabels(const FeatureGridSpec& s, int k)
    : spec(s),
      k_per_point(k),
      labels(s.cells() * k, Label::Negative),
      psi(s.cells() * k, 0.0),
      offsets(s.cells() * k, Offsets{0.0, 0.0, 0.0, 0.0}),
      matched(s.cells() * k, -1) {}

int LabelGrid::count(Label label) const {
    int n = 0;
    for (const auto& level : levels) {
        n += static_cast<int>(std::count(level.labels.begin(), level.labels.end(), label));
    }
    return n;
}

int select_scale(const BoxXYZD& box, const AssignConfig& cfg) {
    if (box.d <= cfg.c1) {
        return 0;
    }
    if (box.d <= cfg.c2) {
        return 1;
    }
    return 2;
}

double gaussian_weight(const CenterPoint& p, const BoxXYZD& g, double alpha) {
    const double dx = g.cx - p.x;
    const double dy = g.cy - p.y;
    const double dz = g.cz - p.z;
    return std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * alpha * g.d * g.d));
}

Offsets encode_offsets(const BoxXYZD& g, const CenterPoint& p, int stride) {
    const double s = stride;
    return {(g.cx - p.x) / s, (g.cy - p.y) / s, (g.cz - p.z) / s, std::log(g.d / s)};
}

BoxXYZD decode_offsets(const Offsets& v, const CenterPoint& p, int stride) {
    const double s = stride;
    return {p.x + v[0] * s, p.y + v[1] * s, p.z + v[2] * s, s * std::exp(v[3])};
}

Offsets encode_anchor_offsets(const BoxXYZD& g, const CenterPoint& p, double anchor_d) {
    return {(g.cx - p.x) / anchor_d, (g.cy - p.y) / anchor_d, (g.cz - p.z) / anchor_d,
            std::log(g.d / anchor_d)};
}

BoxXYZD decode_anchor_offsets(const Offsets& v, const CenterPoint& p, double anchor_d) {
    return {p.x + v[0] * anchor_d, p.y + v[1] * anchor_d, p.z + v[2] * anchor_d, anchor_d * std::exp(v[3])};
}

double iou_cube(const BoxXYZD& a, const BoxXYZD& b) {
    double intersection = 1.0;
    for (int axis = 0; axis < 3; ++axis) {
        const double lo = std::max(a.axis(axis) - a.d / 2.0, b.axis(axis) - b.d / 2.0);
        const double hi = std::min(a.axis(axis) + a.d / 2.0, b.axis(axis) + b.d / 2.0);
        if (hi <= lo) {
            return 0.0;
        }
        intersection *= hi - lo;
    }
    const double uni = a.d * a.d * a.d + b.d * b.d * b.d - intersection;
    return std::clamp(intersection / uni, 0.0, 1.0);
}

double center_distance(const BoxXYZD& a, const BoxXYZD& b) {
    const double dx = a.cx - b.cx;
    const double dy = a.cy - b.cy;
    const double dz = a.cz - b.cz;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

namespace {

double squared_distance(const CenterPoint& p, const BoxXYZD& g) {
    const double dx = g.cx - p.x;
    const double dy = g.cy - p.y;
    const double dz = g.cz - p.z;
    return dx * dx + dy * dy + dz * dz;
}

// Grid indices i with |s*i - c| <= half along one axis.
std::pair<int, int> index_range(double c, double half, int stride, int n) {
    const double s = stride;
    int lo = static_cast<int>(std::ceil((c - half) / s));
    int hi = static_cast<int>(std::floor((c + half) / s));
    // Guard against rounding at the boundary of the closed interval.
    while (lo - 1 >= 0 && std::abs(s * (lo - 1) - c) <= half) {
        --lo;
    }
    while (lo <= hi && std::abs(s * lo - c) > half) {
        ++lo;
    }
    while (hi + 1 < n && std::abs(s * (hi + 1) - c) <= half) {
        ++hi;
    }
    while (hi >= lo && std::abs(s * hi - c) > half) {
        --hi;
    }
    return {std::max(lo, 0), std::min(hi, n - 1)};
}

int nearest_index(double c, int stride, int n) {
    const long idx = std::lround(c / stride);
    return static_cast<int>(std::clamp<long>(idx, 0, n - 1));
}

}  // namespace

LabelGrid assign_anchor_free(std::span<const BoxXYZD> boxes, std::span<const FeatureGridSpec> specs,
                             const AssignConfig& cfg) {
    cfg.validate();
    LabelGrid grid;
    for (const auto& spec : specs) {
        grid.levels.emplace_back(spec, 1);
    }
    // Per level, per cell: the claiming box (nearest centroid wins) and its squared distance.
    std::vector<std::vector<double>> claim_dist(specs.size());
    for (std::size_t l = 0; l < specs.size(); ++l) {
        claim_dist[l].assign(specs[l].cells(), std::numeric_limits<double>::infinity());
    }

    auto claim = [&](std::size_t l, std::size_t cell, int box_index) {
        auto& level = grid.levels[l];
        const auto& spec = specs[l];
        const int x = static_cast<int>(cell % spec.dims.x);
        const int y = static_cast<int>((cell / spec.dims.x) % spec.dims.y);
        const int z = static_cast<int>(cell / (static_cast<std::size_t>(spec.dims.x) * spec.dims.y));
        const double d2 = squared_distance(center_point(spec, z, y, x), boxes[box_index]);
        if (d2 < claim_dist[l][cell]) {
            claim_dist[l][cell] = d2;
            level.matched[cell] = box_index;
        }
    };

    for (int b = 0; b < static_cast<int>(boxes.size()); ++b) {
        const auto& box = boxes[b];
        require(is_valid(box), ErrorCode::InvalidArgument, "assignment box must have finite centroid and d > 0");
        const int level_index = std::min<int>(select_scale(box, cfg), static_cast<int>(specs.size()) - 1);
        const auto& spec = specs[level_index];
        auto& level = grid.levels[level_index];

        const double half_pos = cfg.eps_p * box.d / 2.0;
        const double half_neg = cfg.eps_n * box.d / 2.0;
        std::array<std::pair<int, int>, 3> pos_range;
        std::array<std::pair<int, int>, 3> neg_range;
        for (int a = 0; a < 3; ++a) {
            pos_range[a] = index_range(box.axis(a), half_pos, spec.stride, spec.dims[a]);
            neg_range[a] = index_range(box.axis(a), half_neg, spec.stride, spec.dims[a]);
        }

        bool any_positive = true;
        for (int a = 0; a < 3; ++a) {
            any_positive = any_positive && pos_range[a].first <= pos_range[a].second;
        }

        for (int z = neg_range[0].first; z <= neg_range[0].second; ++z) {
            for (int y = neg_range[1].first; y <= neg_range[1].second; ++y) {
                for (int x = neg_range[2].first; x <= neg_range[2].second; ++x) {
                    const auto cell = spec.cell_index(z, y, x);
                    const bool inside_pos = z >= pos_range[0].first && z <= pos_range[0].second &&
                                            y >= pos_range[1].first && y <= pos_range[1].second &&
                                            x >= pos_range[2].first && x <= pos_range[2].second;
                    if (inside_pos) {
                        claim(level_index, cell, b);
                    } else if (level.labels[cell] == Label::Negative) {
                        level.labels[cell] = Label::Ignored;
                    }
                }
            }
        }
        if (!any_positive) {
            const int z = nearest_index(box.cz, spec.stride, spec.dims.z);
            const int y = nearest_index(box.cy, spec.stride, spec.dims.y);
            const int x = nearest_index(box.cx, spec.stride, spec.dims.x);
            claim(level_index, spec.cell_index(z, y, x), b);
        }
    }

    for (std::size_t l = 0; l < specs.size(); ++l) {
        auto& level = grid.levels[l];
        const auto& spec = specs[l];
        for (std::size_t cell = 0; cell < spec.cells(); ++cell) {
            const int b = level.matched[cell];
            if (b < 0) {
                continue;
            }
            const int x = static_cast<int>(cell % spec.dims.x);
            const int y = static_cast<int>((cell / spec.dims.x) % spec.dims.y);
            const int z = static_cast<int>(cell / (static_cast<std::size_t>(spec.dims.x) * spec.dims.y));
            const auto p = center_point(spec, z, y, x);
            level.labels[cell] = Label::Positive;
            level.psi[cell] = gaussian_weight(p, boxes[b], cfg.alpha_gauss);
            level.offsets[cell] = encode_offsets(boxes[b], p, spec.stride);
        }
    }
    return grid;
}

LabelGrid assign_anchor_based(std::span<const BoxXYZD> boxes, std::span<const FeatureGridSpec> specs,
                              const AnchorConfig& cfg) {
    cfg.validate();
    const int k = cfg.k_per_point();
    LabelGrid grid;
    for (const auto& spec : specs) {
        grid.levels.emplace_back(spec, k);
    }
    std::vector<double> best_iou(boxes.size(), -1.0);
    std::vector<std::pair<std::size_t, std::size_t>> best_slot(boxes.size(), {0, 0});

    for (std::size_t l = 0; l < specs.size(); ++l) {
        const auto& spec = specs[l];
        auto& level = grid.levels[l];
        const auto& diameters = cfg.diameters[std::min<std::size_t>(l, 2)];
        for (int z = 0; z < spec.dims.z; ++z) {
            for (int y = 0; y < spec.dims.y; ++y) {
                for (int x = 0; x < spec.dims.x; ++x) {
                    const auto p = center_point(spec, z, y, x);
                    const auto cell = spec.cell_index(z, y, x);
                    for (int a = 0; a < k; ++a) {
                        const BoxXYZD anchor{p.x, p.y, p.z, diameters[a]};
                        const auto slot = cell * k + a;
                        double max_iou = 0.0;
                        int argmax = -1;
                        for (std::size_t b = 0; b < boxes.size(); ++b) {
                            const double iou = iou_cube(anchor, boxes[b]);
                            if (iou > max_iou) {
                                max_iou = iou;
                                argmax = static_cast<int>(b);
                            }
                            if (iou > best_iou[b]) {
                                best_iou[b] = iou;
                                best_slot[b] = {l, slot};
                            }
                        }
                        if (argmax >= 0 && max_iou >= cfg.iou_pos) {
                            level.labels[slot] = Label::Positive;
                            level.matched[slot] = argmax;
                        } else if (max_iou >= cfg.iou_neg) {
                            level.labels[slot] = Label::Ignored;
                        }
                    }
                }
            }
        }
    }
    for (std::size_t b = 0; b < boxes.size(); ++b) {
        const auto [l, slot] = best_slot[b];
        auto& level = grid.levels[l];
        level.labels[slot] = Label::Positive;
        level.matched[slot] = static_cast<int>(b);
    }
    for (std::size_t l = 0; l < specs.size(); ++l) {
        auto& level = grid.levels[l];
        const auto& spec = specs[l];
        const auto& diameters = cfg.diameters[std::min<std::size_t>(l, 2)];
        for (std::size_t slot = 0; slot < level.slots(); ++slot) {
            if (level.labels[slot] != Label::Positive) {
                continue;
            }
            const auto cell = slot / k;
            const int a = static_cast<int>(slot % k);
            const int x = static_cast<int>(cell % spec.dims.x);
            const int y = static_cast<int>((cell / spec.dims.x) % spec.dims.y);
            const int z = static_cast<int>(cell / (static_cast<std::size_t>(spec.dims.x) * spec.dims.y));
            const auto p = center_point(spec, z, y, x);
            level.psi[slot] = 1.0;
            level.offsets[slot] = encode_anchor_offsets(boxes[level.matched[slot]], p, diameters[a]);
        }
    }
    return grid;
}

std::string label_grid_csv(const LabelGrid& grid) {
    const bool anchors = !grid.levels.empty() && grid.levels.front().k_per_point > 1;
    std::ostringstream out;
    out.precision(17);
    out << "level,i,j,k,label,psi,dx,dy,dz,dd" << (anchors ? ",anchor" : "") << '\n';
    for (const auto& level : grid.levels) {
        const auto& spec = level.spec;
        for (std::size_t slot = 0; slot < level.slots(); ++slot) {
            const auto cell = slot / level.k_per_point;
            const int x = static_cast<int>(cell % spec.dims.x);
            const int y = static_cast<int>((cell / spec.dims.x) % spec.dims.y);
            const int z = static_cast<int>(cell / (static_cast<std::size_t>(spec.dims.x) * spec.dims.y));
            const auto& o = level.offsets[slot];
            out << spec.level << ',' << x << ',' << y << ',' << z << ',' << to_string(level.labels[slot]) << ','
                << level.psi[slot] << ',' << o[0] << ',' << o[1] << ',' << o[2] << ',' << o[3];
            if (anchors) {
                out << ',' << slot % level.k_per_point;
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace af3d
