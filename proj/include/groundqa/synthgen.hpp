#pragma once

// Synthetic causal-VideoQA benchmark generator. Each instance is a video of
// K clip feature rows, a tokenized question, and an answer produced by an
// exact oracle that reads only the causal clips. Environment clips carry a
// cluster signal that is correlated with the answer at a configurable
// strength in the training distribution and uncorrelated in the OOD split,
// so models that lean on the environment shortcut are measurably injured
// out of distribution while the causal mechanism itself never changes.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/rng.hpp"
#include "groundqa/core/tape.hpp"

namespace groundqa {

struct CausalSpan {
    int min_clips = 2;
    int max_clips = 4;
};

struct GenConfig {
    int num_videos = 2857;
    int K = 16;
    int d = 16;
    int L = 6;
    int num_answers = 4;
    CausalSpan causal_span{2, 4};
    double bias_rho = 0.9;
    double noise_sigma = 0.35;
    int num_objects = 4;
    int num_qtypes = 4;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_videos < 4) throw ConfigError("GenConfig: num_videos must be at least 4");
        if (K < 2) throw ConfigError("GenConfig: K must be at least 2");
        if (d < 6) throw ConfigError("GenConfig: d must be at least 6 (three feature subspaces)");
        if (L < 1) throw ConfigError("GenConfig: L must be at least 1");
        if (num_answers < 2) throw ConfigError("GenConfig: num_answers must be at least 2");
        if (causal_span.min_clips < 1 || causal_span.min_clips > causal_span.max_clips ||
            causal_span.max_clips >= K)
            throw ConfigError("GenConfig: need 1 <= span.min <= span.max < K");
        if (bias_rho < 0.0 || bias_rho > 1.0)
            throw ConfigError("GenConfig: bias_rho must lie in [0,1]");
        if (noise_sigma < 0.0) throw ConfigError("GenConfig: noise_sigma must be nonnegative");
        if (num_objects < 0) throw ConfigError("GenConfig: num_objects must be nonnegative");
        if (num_qtypes < 1) throw ConfigError("GenConfig: num_qtypes must be positive");
    }
};

struct VideoInstance {
    Mat clips;                        // K x d
    std::vector<Mat> objects;         // K entries of S x d; empty when S = 0
    std::vector<std::uint8_t> causal_mask; // K entries in {0,1}
    std::string id;
};

struct QuestionInstance {
    Mat tokens; // L x d
    int qtype = 0;
    int answer = 0;
};

struct Instance {
    VideoInstance video;
    QuestionInstance question;
    int env_cluster = 0;
};

// Fixed parameters of the generative mechanism, shared by every split of a
// bundle. Answer centroids live in the content subspace, environment cluster
// centroids in the context subspace, per-position codes in the position
// subspace; all are stored full-width with zeros outside their subspace.
struct Mechanism {
    Mat centroids;     // num_answers x d
    Mat env_centroids; // num_answers x d
    Mat pos_codes;     // K x d
    Mat qtype_embed;   // num_qtypes x d
    int content_dims = 0;
    int context_dims = 0;
    int position_dims = 0;
};

struct DatasetBundle {
    GenConfig config;
    Mechanism mechanism;
    std::vector<Instance> train, val, test_iid, test_ood;

    const std::vector<Instance>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test_iid") return test_iid;
        if (name == "test_ood") return test_ood;
        throw ConfigError("unknown split name: " + name);
    }
};

inline const std::vector<std::string>& split_names() {
    static const std::vector<std::string> names{"train", "val", "test_iid", "test_ood"};
    return names;
}

namespace detail {

// Rounds every entry through IEEE float32. Generated features pass through
// this before the oracle runs, so answers recomputed from a serialized file
// (which stores float32) match the stored labels exactly.
inline void quantize_f32(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = static_cast<double>(static_cast<float>(m(r, c)));
}

inline void subspace_dims(int d, int& content, int& context, int& position) {
    context = std::max(2, d / 4);
    position = std::max(2, d / 4);
    content = d - context - position;
}

inline Mat noise_block(Rng& rng, int rows, int cols, double sigma) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = sigma * rng.normal();
    return m;
}

// Unit-norm rows confined to columns [at, at+width), resampled until all
// pairwise distances clear a floor so clusters cannot collide.
inline Mat spread_rows(Rng& rng, int n, int d, int at, int width, double scale) {
    Mat out = Mat::Zero(n, d);
    for (int r = 0; r < n; ++r) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            Eigen::RowVectorXd v(width);
            for (int c = 0; c < width; ++c) v(c) = rng.normal();
            double norm = v.norm();
            if (norm < 1e-9) continue;
            v *= scale / norm;
            bool ok = true;
            for (int p = 0; p < r && ok; ++p)
                if ((out.block(p, at, 1, width) - v).norm() < 0.8 * scale) ok = false;
            if (ok) {
                out.block(r, at, 1, width) = v;
                break;
            }
        }
        if (out.block(r, at, 1, width).norm() < 1e-9)
            throw NumericError("spread_rows: failed to place distinct cluster centers");
    }
    return out;
}

} // namespace detail

// Builds the mechanism from the config seed. Deterministic; identical for
// every split so the OOD shift touches only the environment-answer coupling.
inline Mechanism build_mechanism(const GenConfig& cfg) {
    cfg.validate();
    Mechanism mech;
    detail::subspace_dims(cfg.d, mech.content_dims, mech.context_dims, mech.position_dims);
    const int ctx_at = mech.content_dims;
    const int pos_at = mech.content_dims + mech.context_dims;

    Rng rng(derive_seed(cfg.seed, {0x6D656368ULL}));
    const double content_scale = std::sqrt(double(mech.content_dims));
    const double context_scale = 1.8 * std::sqrt(double(mech.context_dims));
    mech.centroids =
        detail::spread_rows(rng, cfg.num_answers, cfg.d, 0, mech.content_dims, content_scale);
    mech.env_centroids =
        detail::spread_rows(rng, cfg.num_answers, cfg.d, ctx_at, mech.context_dims, context_scale);
    mech.pos_codes =
        detail::spread_rows(rng, cfg.K, cfg.d, pos_at, mech.position_dims, 1.0);
    mech.qtype_embed =
        detail::spread_rows(rng, cfg.num_qtypes, cfg.d, 0, mech.content_dims, 0.5 * content_scale);

    detail::quantize_f32(mech.centroids);
    detail::quantize_f32(mech.env_centroids);
    detail::quantize_f32(mech.pos_codes);
    detail::quantize_f32(mech.qtype_embed);
    return mech;
}

// The deterministic C,Q -> A mechanism: nearest centroid of the mean causal
// clip feature. Permutation-invariant in the clip rows and independent of
// everything outside them; the question participates in the signature (a
// mechanism may condition on it) but the nearest-centroid rule does not read
// it.
inline int oracle_answer(const Mechanism& mech, const Mat& causal_clips,
                         const QuestionInstance& question) {
    if (causal_clips.rows() < 1)
        throw DegenerateInputError("oracle_answer: need at least one causal clip");
    if (causal_clips.cols() != mech.centroids.cols())
        throw ShapeError("oracle_answer: clip width does not match mechanism");
    if (!causal_clips.allFinite() || !question.tokens.allFinite())
        throw NumericError("oracle_answer: non-finite input");
    Eigen::RowVectorXd mean = causal_clips.colwise().mean();
    int best = 0;
    double best_d = (mean - mech.centroids.row(0)).squaredNorm();
    for (int k = 1; k < mech.centroids.rows(); ++k) {
        double dist = (mean - mech.centroids.row(k)).squaredNorm();
        if (dist < best_d) {
            best_d = dist;
            best = k;
        }
    }
    return best;
}

namespace detail {

enum : std::uint64_t { kSplitTrain = 1, kSplitVal = 2, kSplitIid = 3, kSplitOod = 4 };

inline Instance generate_instance(const GenConfig& cfg, const Mechanism& mech,
                                  std::uint64_t split_tag, int index, double coupling,
                                  const std::string& id) {
    Rng rng(derive_seed(cfg.seed, {split_tag, std::uint64_t(index)}));
    const int ctx_at = mech.content_dims;
    const int pos_at = mech.content_dims + mech.context_dims;

    // Contiguous causal window; contiguity mirrors how question-critical
    // moments occupy an interval of a real video.
    int span = cfg.causal_span.min_clips +
               int(rng.index(std::size_t(cfg.causal_span.max_clips - cfg.causal_span.min_clips + 1)));
    int start = int(rng.index(std::size_t(cfg.K - span + 1)));
    int k_true = int(rng.index(std::size_t(cfg.num_answers)));

    Instance inst;
    inst.video.id = id;
    inst.video.causal_mask.assign(std::size_t(cfg.K), 0);
    inst.video.clips = Mat::Zero(cfg.K, cfg.d);

    for (int k = start; k < start + span; ++k) inst.video.causal_mask[std::size_t(k)] = 1;

    for (int k = 0; k < cfg.K; ++k) {
        Eigen::RowVectorXd row = mech.pos_codes.row(k);
        if (inst.video.causal_mask[std::size_t(k)]) {
            row.segment(0, mech.content_dims) +=
                mech.centroids.row(k_true).segment(0, mech.content_dims) +
                noise_block(rng, 1, mech.content_dims, cfg.noise_sigma).row(0);
            row.segment(ctx_at, mech.context_dims) +=
                noise_block(rng, 1, mech.context_dims, 0.25 * cfg.noise_sigma).row(0);
        } else {
            row.segment(0, mech.content_dims) +=
                noise_block(rng, 1, mech.content_dims, cfg.noise_sigma).row(0);
        }
        inst.video.clips.row(k) = row;
    }

    quantize_f32(inst.video.clips);

    // The label is whatever the oracle says about the serialized causal rows,
    // so the stored-answer invariant is exact rather than probabilistic.
    Mat causal_rows(span, cfg.d);
    for (int k = 0, at = 0; k < cfg.K; ++k)
        if (inst.video.causal_mask[std::size_t(k)]) causal_rows.row(at++) = inst.video.clips.row(k);
    QuestionInstance probe;
    probe.tokens = Mat::Zero(1, cfg.d);
    int answer = oracle_answer(mech, causal_rows, probe);

    int env_cluster =
        (rng.uniform() < coupling) ? answer : int(rng.index(std::size_t(cfg.num_answers)));

    // Environment content is written only now that the answer is fixed; the
    // causal rows above are final.
    for (int k = 0; k < cfg.K; ++k) {
        if (inst.video.causal_mask[std::size_t(k)]) continue;
        Eigen::RowVectorXd row = inst.video.clips.row(k);
        row.segment(ctx_at, mech.context_dims) +=
            mech.env_centroids.row(env_cluster).segment(ctx_at, mech.context_dims) +
            noise_block(rng, 1, mech.context_dims, 0.5 * cfg.noise_sigma).row(0);
        inst.video.clips.row(k) = row;
    }
    quantize_f32(inst.video.clips);

    inst.question.answer = answer;
    inst.env_cluster = env_cluster;

    if (cfg.num_objects > 0) {
        inst.video.objects.reserve(std::size_t(cfg.K));
        for (int k = 0; k < cfg.K; ++k) {
            Mat obj = Mat::Zero(cfg.num_objects, cfg.d);
            obj.row(0) = inst.video.clips.row(k) +
                         noise_block(rng, 1, cfg.d, 0.25 * cfg.noise_sigma).row(0);
            for (int s = 1; s < cfg.num_objects; ++s)
                obj.row(s) = mech.pos_codes.row(k) +
                             noise_block(rng, 1, cfg.d, cfg.noise_sigma).row(0);
            quantize_f32(obj);
            inst.video.objects.push_back(std::move(obj));
        }
    }

    inst.question.qtype = int(rng.index(std::size_t(cfg.num_qtypes)));
    Eigen::RowVectorXd hint = Eigen::RowVectorXd::Zero(cfg.d);
    for (int k = start; k < start + span; ++k) hint += mech.pos_codes.row(k);
    hint /= double(span);
    inst.question.tokens = Mat::Zero(cfg.L, cfg.d);
    for (int l = 0; l < cfg.L; ++l)
        inst.question.tokens.row(l) = mech.qtype_embed.row(inst.question.qtype) + hint +
                                      noise_block(rng, 1, cfg.d, 0.3 * cfg.noise_sigma).row(0);
    quantize_f32(inst.question.tokens);
    return inst;
}

} // namespace detail

// Splits are 70/10/10/10 by largest remainder, ids disjoint by construction.
inline DatasetBundle generate_dataset(const GenConfig& cfg) {
    cfg.validate();
    DatasetBundle bundle;
    bundle.config = cfg;
    bundle.mechanism = build_mechanism(cfg);

    const int n = cfg.num_videos;
    int counts[4];
    counts[0] = (n * 7) / 10;
    counts[1] = n / 10;
    counts[2] = n / 10;
    counts[3] = n / 10;
    int used = counts[0] + counts[1] + counts[2] + counts[3];
    for (int i = 0; used < n; i = (i + 1) % 4, ++used) ++counts[i];

    struct SplitPlan {
        std::vector<Instance>* out;
        std::uint64_t tag;
        const char* name;
        bool ood;
    };
    SplitPlan plans[4] = {
        {&bundle.train, detail::kSplitTrain, "train", false},
        {&bundle.val, detail::kSplitVal, "val", false},
        {&bundle.test_iid, detail::kSplitIid, "test_iid", false},
        {&bundle.test_ood, detail::kSplitOod, "test_ood", true},
    };

    for (int p = 0; p < 4; ++p) {
        // OOD removes the coupling entirely: cluster uniform, so it matches
        // the answer with probability exactly 1/num_answers.
        double coupling = plans[p].ood ? 0.0 : cfg.bias_rho;
        plans[p].out->reserve(std::size_t(counts[p]));
        for (int i = 0; i < counts[p]; ++i) {
            char id[64];
            std::snprintf(id, sizeof id, "%s:%06d", plans[p].name, i);
            plans[p].out->push_back(detail::generate_instance(cfg, bundle.mechanism, plans[p].tag,
                                                              i, coupling, id));
        }
    }
    return bundle;
}

// Convenience used by training and evaluation: rows of the video selected by
// the stored ground-truth mask.
inline Mat causal_rows(const VideoInstance& v) {
    int n = 0;
    for (std::uint8_t b : v.causal_mask) n += b;
    if (n == 0) throw DegenerateInputError("causal_rows: empty mask");
    Mat out(n, v.clips.cols());
    int at = 0;
    for (int k = 0; k < int(v.causal_mask.size()); ++k)
        if (v.causal_mask[std::size_t(k)]) out.row(at++) = v.clips.row(k);
    return out;
}

} // namespace groundqa
