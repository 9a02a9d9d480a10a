#include "af3d/losses.hpp"

#include <cmath>

#include "af3d/error.hpp"

namespace af3d {

void LossConfig::validate() const {
    require(gamma >= 0.0, ErrorCode::Validation, "focal gamma must be >= 0");
    require(alpha_focal > 0.0 && alpha_focal < 1.0, ErrorCode::Validation, "alpha_focal must lie in (0, 1)");
    require(smooth_l1_beta > 0.0, ErrorCode::Validation, "smooth_l1_beta must be > 0");
    require(n_pos_floor >= 1, ErrorCode::Validation, "n_pos_floor must be >= 1");
}

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Focal loss given p, 1 - p and their logs; y selects the class.
ValueGrad focal_core(double p, double q, double log_p, double log_q, int y, const LossConfig& cfg) {
    const double g = cfg.gamma;
    if (y == 1) {
        // L = -a q^g log p ; dL/dz = -a q^g (q - g p log p)
        const double a = cfg.alpha_focal;
        const double qg = std::pow(q, g);
        return {-a * qg * log_p, -a * qg * (q - g * p * log_p)};
    }
    // L = -a p^g log q ; dL/dz = a p^g (p - g q log q)
    const double a = 1.0 - cfg.alpha_focal;
    const double pg = std::pow(p, g);
    return {-a * pg * log_q, a * pg * (p - g * q * log_q)};
}

}  // namespace

ValueGrad focal_term(double p, int y, const LossConfig& cfg) {
    require(p > 0.0 && p < 1.0 && std::isfinite(p), ErrorCode::InvalidArgument,
            "focal_term requires p in (0, 1)");
    require(y == 0 || y == 1, ErrorCode::InvalidArgument, "focal_term requires binary y");
    return focal_core(p, 1.0 - p, std::log(p), std::log1p(-p), y, cfg);
}

ValueGrad focal_term_logit(double logit, int y, const LossConfig& cfg) {
    require(std::isfinite(logit), ErrorCode::InvalidArgument, "focal_term requires a finite logit");
    require(y == 0 || y == 1, ErrorCode::InvalidArgument, "focal_term requires binary y");
    return focal_core(sigmoid(logit), sigmoid(-logit), -softplus(-logit), -softplus(logit), y, cfg);
}

ClassificationResult classification_loss(const std::vector<LevelPrediction>& preds, const LabelGrid& labels,
                                         const LossConfig& cfg) {
    cfg.validate();
    require(preds.size() == labels.levels.size(), ErrorCode::SizeMismatch,
            "classification loss: level count mismatch");
    ClassificationResult result;
    result.grads.resize(preds.size());
    for (std::size_t l = 0; l < preds.size(); ++l) {
        require(preds[l].logits.size() == labels.levels[l].slots(), ErrorCode::SizeMismatch,
                "classification loss: logits do not match the label grid");
        result.grads[l].assign(preds[l].logits.size(), 0.0);
    }
    result.n_pos = labels.count(Label::Positive);
    result.n_neg = labels.count(Label::Negative);
    const double norm = std::max(result.n_pos, cfg.n_pos_floor);

    double neg_sum = 0.0;
    double pos_sum = 0.0;
    for (std::size_t l = 0; l < preds.size(); ++l) {
        const auto& level = labels.levels[l];
        for (std::size_t s = 0; s < level.slots(); ++s) {
            const double z = preds[l].logits[s];
            switch (level.labels[s]) {
                case Label::Negative: {
                    const auto fg = focal_term_logit(z, 0, cfg);
                    neg_sum += fg.value;
                    result.grads[l][s] = fg.grad / norm;
                    break;
                }
                case Label::Positive: {
                    // psi-weighted cross entropy: -psi log p, d/dz = -psi (1 - p)
                    const double psi = level.psi[s];
                    pos_sum += psi * softplus(-z);
                    result.grads[l][s] = -psi * sigmoid(-z) / norm;
                    break;
                }
                case Label::Ignored:
                    break;
            }
        }
    }
    result.value = neg_sum / norm + pos_sum / norm;
    return result;
}

SmoothL1Result smooth_l1(const Offsets& pred, const Offsets& target, double beta) {
    SmoothL1Result r;
    for (int c = 0; c < 4; ++c) {
        const double x = pred[c] - target[c];
        if (std::abs(x) < beta) {
            r.value += 0.5 * x * x / beta;
            r.grad[c] = x / beta;
        } else {
            r.value += std::abs(x) - 0.5 * beta;
            r.grad[c] = x > 0.0 ? 1.0 : -1.0;
        }
    }
    return r;
}

LocalizationResult localization_loss(const std::vector<LevelPrediction>& preds, const LabelGrid& labels,
                                     const LossConfig& cfg) {
    cfg.validate();
    require(preds.size() == labels.levels.size(), ErrorCode::SizeMismatch,
            "localization loss: level count mismatch");
    LocalizationResult result;
    result.grads.resize(preds.size());
    for (std::size_t l = 0; l < preds.size(); ++l) {
        require(preds[l].offsets.size() == labels.levels[l].slots(), ErrorCode::SizeMismatch,
                "localization loss: offsets do not match the label grid");
        result.grads[l].assign(preds[l].offsets.size(), Offsets{0.0, 0.0, 0.0, 0.0});
    }
    result.n_pos = labels.count(Label::Positive);
    const double norm = std::max(result.n_pos, cfg.n_pos_floor);
    double sum = 0.0;
    for (std::size_t l = 0; l < preds.size(); ++l) {
        const auto& level = labels.levels[l];
        for (std::size_t s = 0; s < level.slots(); ++s) {
            if (level.labels[s] != Label::Positive) {
                continue;
            }
            const auto sl = smooth_l1(preds[l].offsets[s], level.offsets[s], cfg.smooth_l1_beta);
            sum += sl.value;
            for (int c = 0; c < 4; ++c) {
                result.grads[l][s][c] = sl.grad[c] / norm;
            }
        }
    }
    result.value = sum / norm;
    return result;
}

LossBreakdown total_loss(double l_cls, double l_loc) {
    return {l_cls, l_loc, l_cls + l_loc, 0, 0};
}

LossBreakdown total_loss(const ClassificationResult& cls, const LocalizationResult& loc) {
    auto b = total_loss(cls.value, loc.value);
    b.n_pos = cls.n_pos;
    b.n_neg = cls.n_neg;
    return b;
}

}  // namespace af3d
