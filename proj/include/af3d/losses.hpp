#pragma once

#include <vector>

#include "af3d/assignment.hpp"

namespace af3d {

struct LossConfig {
    double alpha_focal = 0.25;
    double gamma = 2.0;
    double smooth_l1_beta = 1.0;
    int n_pos_floor = 1;

    void validate() const;
};

struct LossBreakdown {
    double l_cls = 0.0;
    double l_loc = 0.0;
    double l_total = 0.0;
    int n_pos = 0;
    int n_neg = 0;
};

struct ValueGrad {
    double value = 0.0;
    double grad = 0.0;
};

/// Focal term for probability p of class y, with the gradient taken w.r.t. the logit of p.
ValueGrad focal_term(double p, int y, const LossConfig& cfg);

/// Same quantity evaluated from the logit directly (numerically stable for saturated logits).
ValueGrad focal_term_logit(double logit, int y, const LossConfig& cfg);

/// Per-level network predictions aligned with LevelLabels slots.
struct LevelPrediction {
    std::vector<double> logits;
    std::vector<Offsets> offsets;
};

struct ClassificationResult {
    double value = 0.0;
    std::vector<std::vector<double>> grads;  // per level, per slot, w.r.t. logit
    int n_pos = 0;
    int n_neg = 0;
};

ClassificationResult classification_loss(const std::vector<LevelPrediction>& preds, const LabelGrid& labels,
                                         const LossConfig& cfg);

struct SmoothL1Result {
    double value = 0.0;
    Offsets grad{};
};

SmoothL1Result smooth_l1(const Offsets& pred, const Offsets& target, double beta);

struct LocalizationResult {
    double value = 0.0;
    std::vector<std::vector<Offsets>> grads;  // per level, per slot
    int n_pos = 0;
};

LocalizationResult localization_loss(const std::vector<LevelPrediction>& preds, const LabelGrid& labels,
                                     const LossConfig& cfg);

LossBreakdown total_loss(const ClassificationResult& cls, const LocalizationResult& loc);
LossBreakdown total_loss(double l_cls, double l_loc);

}  // namespace af3d
