#pragma once

// Training losses: cross-entropy on the causal view, uniformity pressure on
// the environment view, prediction consistency under intervention, soft
// cross-entropy for mixed labels, InfoNCE over answer representations, and
// the two aggregate objectives.

#include <cmath>
#include <vector>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/tape.hpp"

namespace groundqa {

struct PredictionDistribution {
    Var logits;    // 1 x A
    Var log_probs; // 1 x A
    Var probs;     // 1 x A
};

struct LossWeights {
    double igv_lambda1 = 1.0;
    double igv_lambda2 = 1.0;
    double beta = 0.75;

    void validate() const {
        if (igv_lambda1 < 0.0 || igv_lambda2 < 0.0 || beta < 0.0)
            throw ConfigError("LossWeights: weights must be nonnegative");
    }
};

inline PredictionDistribution make_prediction(Tape& t, Var logits) {
    if (t.rows(logits) != 1) throw ShapeError("make_prediction: logits must be a row vector");
    return {logits, t.log_softmax_rows(logits), t.softmax_rows(logits)};
}

// For callers that already hold a probability vector (tests, mixed labels).
inline PredictionDistribution make_prediction_from_probs(Tape& t, Var probs) {
    if (t.rows(probs) != 1) throw ShapeError("make_prediction_from_probs: need a row vector");
    const Mat& p = t.val(probs);
    if (p.minCoeff() < 0.0 || std::abs(p.sum() - 1.0) > 1e-6)
        throw NumericError("make_prediction_from_probs: not a probability vector");
    Var logits = t.log_clamped(probs, 1e-12);
    return {logits, t.log_softmax_rows(logits), probs};
}

inline Var causal_loss(Tape& t, const PredictionDistribution& pred, int answer) {
    if (answer < 0 || answer >= t.cols(pred.log_probs))
        throw ConfigError("causal_loss: answer index out of range");
    return t.neg(t.get(pred.log_probs, 0, answer));
}

// KL from the prediction to the uniform distribution over answers.
inline Var environment_loss(Tape& t, const PredictionDistribution& pred) {
    Eigen::Index A = t.cols(pred.probs);
    Var self_info = t.dot(pred.probs, t.log_clamped(pred.probs, 1e-12));
    return t.shift(self_info, std::log(double(A)));
}

// KL(first argument's distribution over the second's): consistency between
// the intervened prediction and the causal prediction.
inline Var consistency_loss(Tape& t, const PredictionDistribution& pred_vstar,
                            const PredictionDistribution& pred_causal) {
    Var diff = t.sub(t.log_clamped(pred_vstar.probs, 1e-12),
                     t.log_clamped(pred_causal.probs, 1e-12));
    return t.dot(pred_vstar.probs, diff);
}

inline Var igv_objective(Tape& t, Var l_causal, Var l_env, Var l_consistency,
                         const LossWeights& w) {
    w.validate();
    return t.add(l_causal, t.add(t.scale(l_env, w.igv_lambda1),
                                 t.scale(l_consistency, w.igv_lambda2)));
}

inline Var soft_cross_entropy(Tape& t, const PredictionDistribution& pred, Var a_star) {
    if (t.rows(a_star) != 1 || t.cols(a_star) != t.cols(pred.log_probs))
        throw ShapeError("soft_cross_entropy: label/prediction width mismatch");
    return t.neg(t.dot(a_star, pred.log_probs));
}

// InfoNCE on answer representations with raw dot-product similarity; the
// positive occupies slot 0 of the similarity row.
inline Var info_nce(Tape& t, Var anchor, Var positive, const std::vector<Var>& negatives) {
    if (negatives.empty()) throw ConfigError("info_nce: need at least one negative");
    std::vector<Var> sims;
    sims.reserve(negatives.size() + 1);
    sims.push_back(t.dot(anchor, positive));
    for (Var n : negatives) sims.push_back(t.dot(anchor, n));
    Var row = t.concat_cols(sims);
    return t.neg(t.get(t.log_softmax_rows(row), 0, 0));
}

inline Var eigv_objective(Tape& t, Var l_erm, Var l_cl, double beta) {
    if (beta < 0.0) throw ConfigError("eigv_objective: beta must be nonnegative");
    return t.add(l_erm, t.scale(l_cl, beta));
}

} // namespace groundqa
