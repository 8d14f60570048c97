#pragma once

// Causal/environment scene splitting: cross-modal attention scores over
// clips, a Gumbel-Softmax indicator over the two assignments, and the two
// split styles (row selection for the select pipeline, row masking for the
// additive pipeline).

#include <string>
#include <vector>

#include <json.hpp>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/layers.hpp"
#include "groundqa/core/rng.hpp"
#include "groundqa/core/tape.hpp"

namespace groundqa {

struct AttentionScores {
    Var p_c; // 1 x K simplex
    Var p_e; // 1 x K simplex
};

struct SceneSplit {
    enum class Mode { select, mask };
    Mode mode = Mode::select;
    Var indicator;   // K x 2
    Var causal;      // select: n_c x w, mask: K x w
    Var environment; // select: n_e x w, mask: K x w
    std::vector<Eigen::Index> causal_positions; // select mode only
    std::vector<Eigen::Index> env_positions;    // select mode only
};

// Two independent projection pairs score each clip against the question:
// p_c from projections 1/2, p_e from projections 3/4. Each projection is a
// single affine layer, which keeps the documented identity-projection
// behaviour reachable.
class GroundingIndicator {
public:
    GroundingIndicator() = default;
    GroundingIndicator(const std::string& name, int d_h, Rng& rng)
        : proj_v_c_(name + ".proj_v_c", d_h, d_h, rng),
          proj_q_c_(name + ".proj_q_c", d_h, d_h, rng),
          proj_v_e_(name + ".proj_v_e", d_h, d_h, rng),
          proj_q_e_(name + ".proj_q_e", d_h, d_h, rng) {}

    AttentionScores attention_scores(Tape& t, Var v_local, Var q_global) {
        if (!t.val(v_local).allFinite() || !t.val(q_global).allFinite())
            throw NumericError("attention_scores: non-finite input");
        if (t.rows(v_local) < 1)
            throw DegenerateInputError("attention_scores: no clips");
        Var sc = t.transpose(t.matmul(proj_v_c_(t, v_local),
                                      t.transpose(proj_q_c_(t, q_global))));
        Var se = t.transpose(t.matmul(proj_v_e_(t, v_local),
                                      t.transpose(proj_q_e_(t, q_global))));
        return {t.softmax_rows(sc), t.softmax_rows(se)};
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, proj_v_c_.params());
        collect(out, proj_q_c_.params());
        collect(out, proj_v_e_.params());
        collect(out, proj_q_e_.params());
        return out;
    }

    Affine& proj_v_c() { return proj_v_c_; }
    Affine& proj_q_c() { return proj_q_c_; }
    Affine& proj_v_e() { return proj_v_e_; }
    Affine& proj_q_e() { return proj_q_e_; }

private:
    Affine proj_v_c_, proj_q_c_, proj_v_e_, proj_q_e_;
};

inline Mat sample_gumbel_noise(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Mat noise(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) noise(r, c) = rng.gumbel();
    return noise;
}

// Gumbel-Softmax over the two-way assignment per clip with caller-supplied
// noise. Row k is a softmax over ([log p_c[k], log p_e[k]] + noise) /
// temperature; hard mode emits one-hot rows with a straight-through gradient.
// Probabilities are clamped at 1e-12 before the log.
inline Var gumbel_indicator_with_noise(Tape& t, const AttentionScores& scores,
                                       double temperature, bool hard, const Mat& noise) {
    if (temperature <= 0.0) throw ConfigError("gumbel_indicator: temperature must be positive");
    Eigen::Index K = t.cols(scores.p_c);
    if (noise.rows() != K || noise.cols() != 2)
        throw ShapeError("gumbel_indicator: noise must be Kx2");
    Var logits = t.concat_cols({t.transpose(t.log_clamped(scores.p_c, 1e-12)),
                                t.transpose(t.log_clamped(scores.p_e, 1e-12))});
    Var soft = t.softmax_rows(t.scale(t.add(logits, t.constant(noise)), 1.0 / temperature));
    if (!hard) return soft;
    const Mat& s = t.val(soft);
    Mat hard_rows = Mat::Zero(K, 2);
    for (Eigen::Index k = 0; k < K; ++k)
        hard_rows(k, s(k, 0) >= s(k, 1) ? 0 : 1) = 1.0;
    return t.straight_through(hard_rows, soft);
}

inline Var gumbel_indicator(Tape& t, const AttentionScores& scores, double temperature,
                            bool hard, Rng& rng) {
    return gumbel_indicator_with_noise(t, scores, temperature, hard,
                                       sample_gumbel_noise(rng, t.cols(scores.p_c), 2));
}

namespace detail {

// Swaps the two entries of one indicator row on the tape.
inline Var flip_indicator_row(Tape& t, Var indicator, Eigen::Index row) {
    std::vector<Var> rows;
    rows.reserve(std::size_t(t.rows(indicator)));
    for (Eigen::Index k = 0; k < t.rows(indicator); ++k) {
        Var r = t.slice_rows(indicator, k, 1);
        if (k == row)
            r = t.concat_cols({t.slice_cols(r, 1, 1), t.slice_cols(r, 0, 1)});
        rows.push_back(r);
    }
    return t.concat_rows(rows);
}

} // namespace detail

// Partitions video rows by a hard indicator. Degenerate draws (everything on
// one side) are repaired by flipping the row of the strongest opposite-score
// clip, so both views are always non-empty. Selected rows are scaled by
// their own indicator entries (exactly 1 in hard mode), which routes
// gradients from downstream consumers into the indicator.
inline SceneSplit split_select(Tape& t, Var video, Var indicator,
                               const AttentionScores& scores) {
    Eigen::Index K = t.rows(video);
    if (t.rows(indicator) != K || t.cols(indicator) != 2)
        throw ShapeError("split_select: indicator must be Kx2");
    const Mat& ind = t.val(indicator);
    for (Eigen::Index k = 0; k < K; ++k) {
        bool onehot = (ind(k, 0) == 1.0 && ind(k, 1) == 0.0) ||
                      (ind(k, 0) == 0.0 && ind(k, 1) == 1.0);
        if (!onehot) throw StateError("split_select: indicator rows must be hard one-hot");
    }

    Eigen::Index n_causal = Eigen::Index(ind.col(0).sum());
    if (n_causal == K) {
        Eigen::Index weakest;
        t.val(scores.p_e).row(0).maxCoeff(&weakest);
        indicator = detail::flip_indicator_row(t, indicator, weakest);
    } else if (n_causal == 0) {
        Eigen::Index strongest;
        t.val(scores.p_c).row(0).maxCoeff(&strongest);
        indicator = detail::flip_indicator_row(t, indicator, strongest);
    }

    const Mat& fixed = t.val(indicator);
    SceneSplit split;
    split.mode = SceneSplit::Mode::select;
    split.indicator = indicator;
    for (Eigen::Index k = 0; k < K; ++k) {
        if (fixed(k, 0) == 1.0) split.causal_positions.push_back(k);
        else split.env_positions.push_back(k);
    }

    Var col_c = t.slice_cols(indicator, 0, 1);
    Var col_e = t.slice_cols(indicator, 1, 1);
    split.causal = t.scale_rows(t.select_rows(video, split.causal_positions),
                                t.select_rows(col_c, split.causal_positions));
    split.environment = t.scale_rows(t.select_rows(video, split.env_positions),
                                     t.select_rows(col_e, split.env_positions));
    return split;
}

// Masks video rows by the indicator columns; causal + environment equals the
// input exactly whenever indicator rows sum to 1.
inline SceneSplit split_mask(Tape& t, Var video, Var indicator) {
    Eigen::Index K = t.rows(video);
    if (t.rows(indicator) != K || t.cols(indicator) != 2)
        throw ShapeError("split_mask: indicator must be Kx2");
    const Mat& ind = t.val(indicator);
    for (Eigen::Index k = 0; k < K; ++k)
        if (std::abs(ind(k, 0) + ind(k, 1) - 1.0) > 1e-6)
            throw NumericError("split_mask: indicator rows must sum to 1");

    SceneSplit split;
    split.mode = SceneSplit::Mode::mask;
    split.indicator = indicator;
    split.causal = t.scale_rows(video, t.slice_cols(indicator, 0, 1));
    split.environment = t.scale_rows(video, t.slice_cols(indicator, 1, 1));
    return split;
}

// Per-instance grounding dump consumed by the evaluation tooling.
inline nlohmann::json mask_dump_entry(const std::string& id, const Mat& p_c,
                                      const Mat& indicator,
                                      const std::vector<std::uint8_t>& ground_truth) {
    nlohmann::json e;
    e["id"] = id;
    e["p_c"] = std::vector<double>(p_c.data(), p_c.data() + p_c.size());
    std::vector<int> ind;
    ind.reserve(std::size_t(indicator.rows()));
    for (Eigen::Index k = 0; k < indicator.rows(); ++k)
        ind.push_back(indicator(k, 0) >= indicator(k, 1) ? 1 : 0);
    e["indicator"] = ind;
    e["ground_truth_mask"] = std::vector<int>(ground_truth.begin(), ground_truth.end());
    return e;
}

} // namespace groundqa
