#pragma once

// Per-method model bundles: the trainable components each training method
// wires together, built from one run configuration and the dataset's
// dimensions, plus the forward helpers shared by training and evaluation.

#include <string>
#include <variant>
#include <vector>

#include "groundqa/backbone.hpp"
#include "groundqa/core/layers.hpp"
#include "groundqa/core/rng.hpp"
#include "groundqa/encoders.hpp"
#include "groundqa/grounding.hpp"
#include "groundqa/harness/config.hpp"
#include "groundqa/rationalizer.hpp"
#include "groundqa/synthgen.hpp"

namespace groundqa {

struct ModelDims {
    int d = 0;
    int num_answers = 0;
};

inline ModelDims dims_of(const DatasetBundle& bundle) {
    return {bundle.config.d, bundle.config.num_answers};
}

constexpr std::uint64_t kInitStream = 0x696E6974;  // parameter initialization
constexpr std::uint64_t kTrainStream = 0x747261696E; // shuffling and sampling

// Baseline: encode the whole video, fuse with the question, classify.
struct ErmModel {
    SequenceEncoder video;
    SequenceEncoder question;
    Backbone backbone;

    ErmModel(const RunConfig& cfg, const ModelDims& dims, Rng& rng)
        : video("erm.video", dims.d, cfg.d_h, /*bidirectional=*/true, rng),
          question("erm.question", dims.d, cfg.d_h, /*bidirectional=*/true, rng),
          backbone("erm.backbone", cfg.d_h, dims.num_answers, rng, cfg.gcn_layers,
                   cfg.fusion_rank) {}

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, video.params());
        collect(out, question.params());
        collect(out, backbone.params());
        return out;
    }
};

// Grounding over encoded clips, row-selection split, scene intervention.
struct IgvModel {
    SequenceEncoder video;
    SequenceEncoder question;
    GroundingIndicator grounding;
    Backbone backbone;

    IgvModel(const RunConfig& cfg, const ModelDims& dims, Rng& rng)
        : video("igv.video", dims.d, cfg.d_h, /*bidirectional=*/true, rng),
          question("igv.question", dims.d, cfg.d_h, /*bidirectional=*/true, rng),
          grounding("igv.grounding", cfg.d_h, rng),
          backbone("igv.backbone", cfg.d_h, dims.num_answers, rng, cfg.gcn_layers,
                   cfg.fusion_rank) {}

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, video.params());
        collect(out, question.params());
        collect(out, grounding.params());
        collect(out, backbone.params());
        return out;
    }
};

// Grounding over linearly embedded clips, masking split, paired mixing, and
// contrastive construction; the additive split needs the video kept at full
// length, hence the per-clip embedding instead of a recurrent front end.
struct EigvModel {
    LinearEmbed video;
    SequenceEncoder question;
    GroundingIndicator grounding;
    Backbone backbone;

    EigvModel(const RunConfig& cfg, const ModelDims& dims, Rng& rng)
        : video("eigv.video", dims.d, cfg.d_h, rng),
          question("eigv.question", dims.d, cfg.d_h, /*bidirectional=*/true, rng),
          grounding("eigv.grounding", cfg.d_h, rng),
          backbone("eigv.backbone", cfg.d_h, dims.num_answers, rng, cfg.gcn_layers,
                   cfg.fusion_rank) {}

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, video.params());
        collect(out, question.params());
        collect(out, grounding.params());
        collect(out, backbone.params());
        return out;
    }
};

// Frame/object rationalization with transformer reasoning and candidate
// decoding. Front ends are per-row embeddings; candidate features are the
// answer centroids of the dataset mechanism, embedded like everything else.
struct TranstrModel {
    LinearEmbed frames;
    LinearEmbed objects;
    LinearEmbed question;
    LinearEmbed candidates;
    Rationalizer rationalizer;

    TranstrModel(const RunConfig& cfg, const ModelDims& dims, Rng& rng)
        : frames("transtr.frames", dims.d, cfg.d_h, rng),
          objects("transtr.objects", dims.d, cfg.d_h, rng),
          question("transtr.question", dims.d, cfg.d_h, rng),
          candidates("transtr.candidates", dims.d, cfg.d_h, rng),
          rationalizer("transtr.rationalizer", make_rat_config(cfg), dims.num_answers, rng) {}

    static RationalizerConfig make_rat_config(const RunConfig& cfg) {
        RationalizerConfig rc;
        rc.d_h = cfg.d_h;
        rc.K_f = cfg.k_f;
        rc.K_o = cfg.k_o;
        rc.topk.sigma = cfg.topk_sigma;
        rc.topk.samples = cfg.topk_samples;
        return rc;
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, frames.params());
        collect(out, objects.params());
        collect(out, question.params());
        collect(out, candidates.params());
        collect(out, rationalizer.params());
        return out;
    }
};

class Model {
public:
    Model(const RunConfig& cfg, const ModelDims& dims) : method_(cfg.method) {
        if (dims.d < 1 || dims.num_answers < 2)
            throw ConfigError("Model: dataset dimensions are degenerate");
        Rng rng(derive_seed(cfg.seed, {kInitStream}));
        switch (method_) {
            case Method::erm: arch_.emplace<ErmModel>(cfg, dims, rng); break;
            case Method::igv: arch_.emplace<IgvModel>(cfg, dims, rng); break;
            case Method::eigv: arch_.emplace<EigvModel>(cfg, dims, rng); break;
            case Method::transtr: arch_.emplace<TranstrModel>(cfg, dims, rng); break;
        }
    }

    Method method() const { return method_; }

    std::vector<Param*> params() {
        switch (method_) {
            case Method::erm: return erm().params();
            case Method::igv: return igv().params();
            case Method::eigv: return eigv().params();
            case Method::transtr: return transtr().params();
        }
        throw StateError("Model: unknown method");
    }

    ErmModel& erm() { return std::get<ErmModel>(arch_); }
    IgvModel& igv() { return std::get<IgvModel>(arch_); }
    EigvModel& eigv() { return std::get<EigvModel>(arch_); }
    TranstrModel& transtr() { return std::get<TranstrModel>(arch_); }

private:
    Method method_;
    std::variant<std::monostate, ErmModel, IgvModel, EigvModel, TranstrModel> arch_;
};

// Noise-free hard assignment: clip k goes to the causal side exactly when
// its causal score is at least its environment score. Used on inference
// paths, where the draw must be deterministic.
inline Var score_argmax_indicator(Tape& t, const AttentionScores& scores) {
    const Mat& pc = t.val(scores.p_c);
    const Mat& pe = t.val(scores.p_e);
    Mat hard = Mat::Zero(pc.cols(), 2);
    for (Eigen::Index k = 0; k < pc.cols(); ++k)
        hard(k, pc(0, k) >= pe(0, k) ? 0 : 1) = 1.0;
    return t.constant(hard);
}

// Predicted-class index of a 1 x A distribution.
inline int argmax_index(const Mat& row) {
    Eigen::Index best;
    row.row(0).maxCoeff(&best);
    return int(best);
}

} // namespace groundqa
