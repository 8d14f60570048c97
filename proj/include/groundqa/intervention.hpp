#pragma once

// Intervened-sample construction: the environment memory bank and scene
// replacement for grounded training, paired convex mixing of causal factors,
// and the positive/negative sets driving the contrastive objective.

#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/rng.hpp"
#include "groundqa/core/tape.hpp"
#include "groundqa/grounding.hpp"

namespace groundqa {

// Detached environment content captured from a select-mode split.
struct EnvScene {
    Mat rows;                            // n_e x d
    std::vector<Eigen::Index> positions; // source clip slots
};

class MemoryBank {
  public:
    explicit MemoryBank(std::size_t capacity = 4096) : capacity_(capacity) {
        if (capacity_ == 0) throw ConfigError("MemoryBank: capacity must be positive");
    }

    void insert(EnvScene scene) {
        if (scene.rows.rows() == 0) throw DegenerateInputError("MemoryBank: empty scene");
        entries_.push_back(std::move(scene));
        if (entries_.size() > capacity_) entries_.pop_front();
    }

    void insert_from_split(const Tape& t, const SceneSplit& split) {
        if (split.mode != SceneSplit::Mode::select)
            throw ConfigError("MemoryBank: bank entries come from select-mode splits");
        insert({t.val(split.environment), split.env_positions});
    }

    const EnvScene& sample(Rng& rng) const {
        if (entries_.empty()) throw StateError("MemoryBank: sampling from an empty bank");
        return entries_[rng.index(entries_.size())];
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    const EnvScene& entry(std::size_t i) const { return entries_.at(i); }

  private:
    std::size_t capacity_;
    std::deque<EnvScene> entries_;
};

namespace detail {

// Cyclic tiling of source rows into `target` slots.
inline Mat tile_scene_rows(const Mat& src, Eigen::Index target) {
    if (src.rows() == 0) throw DegenerateInputError("tile_scene_rows: empty source");
    Mat out(target, src.cols());
    for (Eigen::Index i = 0; i < target; ++i) out.row(i) = src.row(i % src.rows());
    return out;
}

// K x n one-hot scatter matrix: column i targets row positions[i].
inline Mat scatter_matrix(const std::vector<Eigen::Index>& positions, Eigen::Index total) {
    Mat s = Mat::Zero(total, Eigen::Index(positions.size()));
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] < 0 || positions[i] >= total)
            throw ShapeError("scatter_matrix: position out of range");
        s(positions[i], Eigen::Index(i)) = 1.0;
    }
    return s;
}

} // namespace detail

// Rebuild the full video with the causal clips untouched at their original
// slots and the environment slots filled from a sampled bank scene.
inline Var intervene_environment(Tape& t, const SceneSplit& split, const MemoryBank& bank,
                                 Rng& rng) {
    if (split.mode != SceneSplit::Mode::select)
        throw ConfigError("intervene_environment: split must be in select mode");
    const EnvScene& scene = bank.sample(rng);

    Eigen::Index total = Eigen::Index(split.causal_positions.size() + split.env_positions.size());
    Eigen::Index d = t.cols(split.causal);
    if (scene.rows.cols() != d)
        throw ShapeError("intervene_environment: bank scene width mismatch");

    Var causal_part = t.matmul(t.constant(detail::scatter_matrix(split.causal_positions, total)),
                               split.causal);

    Mat env_part = Mat::Zero(total, d);
    if (!split.env_positions.empty()) {
        Mat fill = detail::tile_scene_rows(scene.rows, Eigen::Index(split.env_positions.size()));
        for (std::size_t i = 0; i < split.env_positions.size(); ++i)
            env_part.row(split.env_positions[i]) = fill.row(Eigen::Index(i));
    }
    return t.add(causal_part, t.constant(env_part));
}

struct MixCoefficients {
    double lambda0 = 1.0; // shared across causal scene, question, answer
    double lambda1 = 1.0; // environment mixing
    double alpha = 1.0;

    void validate() const {
        if (lambda0 < 0.0 || lambda0 > 1.0 || lambda1 < 0.0 || lambda1 > 1.0)
            throw ConfigError("MixCoefficients: lambdas must lie in [0,1]");
        if (alpha <= 0.0) throw ConfigError("MixCoefficients: alpha must be positive");
    }
};

inline MixCoefficients draw_mix(Rng& rng, double alpha = 1.0) {
    if (alpha <= 0.0) throw ConfigError("draw_mix: alpha must be positive");
    MixCoefficients mix;
    mix.alpha = alpha;
    mix.lambda0 = rng.beta(alpha, alpha);
    mix.lambda1 = rng.uniform();
    return mix;
}

namespace detail {

inline Var convex_mix(Tape& t, Var first, Var second, double lambda, const char* what) {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError(std::string(what) + ": lambda outside [0,1]");
    if (t.rows(first) != t.rows(second) || t.cols(first) != t.cols(second))
        throw ShapeError(std::string(what) + ": operand shape mismatch");
    return t.add(t.scale(first, lambda), t.scale(second, 1.0 - lambda));
}

} // namespace detail

struct MixedFactors {
    Var c_star;
    Var q_star;
    Var a_star;
};

// One mixing ratio applied identically to causal scene, question, and answer.
inline MixedFactors e_intervention(Tape& t, Var c1, Var q1, Var a1, Var c2, Var q2, Var a2,
                                   double lambda0) {
    MixedFactors out;
    out.c_star = detail::convex_mix(t, c1, c2, lambda0, "e_intervention");
    out.q_star = detail::convex_mix(t, q1, q2, lambda0, "e_intervention");
    out.a_star = detail::convex_mix(t, a1, a2, lambda0, "e_intervention");
    return out;
}

inline Var i_intervention(Tape& t, Var e1, Var e2, double lambda1) {
    return detail::convex_mix(t, e1, e2, lambda1, "i_intervention");
}

inline Var compose(Tape& t, Var c_star, Var e_star) {
    if (t.rows(c_star) != t.rows(e_star) || t.cols(c_star) != t.cols(e_star))
        throw ShapeError("compose: scene shape mismatch");
    return t.add(c_star, e_star);
}

struct InterventionProvenance {
    std::string first_id;
    std::string second_id;
    MixCoefficients mix;
};

struct InterventionSample {
    Var v_star;
    Var q_star;
    Var a_star;
    InterventionProvenance provenance;
};

// Full paired intervention over two mask-mode splits.
inline InterventionSample make_intervention_sample(Tape& t, const SceneSplit& s1, Var q1, Var a1,
                                                   const std::string& id1, const SceneSplit& s2,
                                                   Var q2, Var a2, const std::string& id2,
                                                   const MixCoefficients& mix) {
    if (s1.mode != SceneSplit::Mode::mask || s2.mode != SceneSplit::Mode::mask)
        throw ConfigError("make_intervention_sample: splits must be in mask mode");
    mix.validate();
    MixedFactors f = e_intervention(t, s1.causal, q1, a1, s2.causal, q2, a2, mix.lambda0);
    Var e_star = i_intervention(t, s1.environment, s2.environment, mix.lambda1);
    InterventionSample out{compose(t, f.c_star, e_star), f.q_star, f.a_star, {id1, id2, mix}};

    const Mat& a = t.val(out.a_star);
    if (a.minCoeff() < -1e-9 || std::abs(a.sum() - 1.0) > 1e-6)
        throw NumericError("make_intervention_sample: mixed label left the simplex");
    return out;
}

struct QuestionPoolEntry {
    std::string id;
    Mat q_global; // 1 x d_h
};

struct ContrastiveConfig {
    int num_negatives = 3;
    bool detach_regrounding = true;
    double temperature = 1.0;
};

struct VQPair {
    Var video;
    Var question;
};

struct ContrastiveSet {
    VQPair anchor;
    VQPair positive;
    std::vector<VQPair> negatives;
};

// Positive: same causal content, environment slots refilled from the bank.
// Negatives: ceil(N/2) causal-swapped videos with the anchor question, then
// floor(N/2) anchor videos paired with a different question. The anchor is
// re-grounded with a hard indicator so the two parts stay disjoint; with
// detach_regrounding the indicator contributes no gradient of its own.
inline ContrastiveSet build_contrastive(Tape& t, GroundingIndicator& grounding, Var v_star,
                                        Var q_star, const std::string& anchor_question_id,
                                        const MemoryBank& bank,
                                        const std::vector<QuestionPoolEntry>& pool,
                                        const ContrastiveConfig& cfg, Rng& rng) {
    if (cfg.num_negatives < 1) throw ConfigError("build_contrastive: need at least one negative");
    if (pool.empty()) throw DegenerateInputError("build_contrastive: empty question pool");

    Var score_v = cfg.detach_regrounding ? t.stop_grad(v_star) : v_star;
    Var score_q = cfg.detach_regrounding ? t.stop_grad(q_star) : q_star;
    AttentionScores scores = grounding.attention_scores(t, score_v, score_q);
    Var indicator = gumbel_indicator(t, scores, cfg.temperature, /*hard=*/true, rng);
    if (cfg.detach_regrounding) indicator = t.stop_grad(indicator);
    SceneSplit re = split_mask(t, v_star, indicator);

    Eigen::Index total = t.rows(v_star);
    Var col_c = t.slice_cols(indicator, 0, 1);
    Var col_e = t.slice_cols(indicator, 1, 1);

    auto filled_view = [&](Var mask_col) {
        const EnvScene& scene = bank.sample(rng);
        if (scene.rows.cols() != t.cols(v_star))
            throw ShapeError("build_contrastive: bank scene width mismatch");
        Mat tiles = detail::tile_scene_rows(scene.rows, total);
        return t.scale_rows(t.constant(tiles), mask_col);
    };

    ContrastiveSet set;
    set.anchor = {v_star, q_star};
    set.positive = {t.add(re.causal, filled_view(col_e)), q_star};

    int visual = (cfg.num_negatives + 1) / 2;
    int textual = cfg.num_negatives / 2;
    for (int i = 0; i < visual; ++i)
        set.negatives.push_back({t.add(filled_view(col_c), re.environment), q_star});

    if (textual > 0) {
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (pool[i].id != anchor_question_id) candidates.push_back(i);
        if (candidates.empty())
            throw DegenerateInputError("build_contrastive: pool holds only the anchor question");
        for (int i = 0; i < textual; ++i) {
            const QuestionPoolEntry& pick = pool[candidates[rng.index(candidates.size())]];
            set.negatives.push_back({v_star, t.constant(pick.q_global)});
        }
    }
    return set;
}

} // namespace groundqa
