#pragma once

// Deterministic inference over a dataset split: per-method forward paths,
// accuracy and grounding aggregation, and the per-instance dump entries the
// reporting tools consume.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundqa/harness/checkpoint.hpp"
#include "groundqa/harness/metrics.hpp"
#include "groundqa/harness/models.hpp"
#include "groundqa/objectives.hpp"
#include "groundqa/synthgen.hpp"

namespace groundqa {

struct EvalOptions {
    // When set, receives one JSON entry per instance: grounding masks for
    // methods that split scenes, frame/object selections for the
    // rationalizing method. Callers persist them as one line each.
    std::vector<nlohmann::json>* dumps = nullptr;
};

namespace detail {

struct InstanceEval {
    int predicted = 0;
    double log_loss = 0.0;
    std::optional<GroundingMetrics> grounding;
};

inline std::vector<int> indicator_causal_mask(const Mat& indicator) {
    std::vector<int> mask(std::size_t(indicator.rows()), 0);
    for (Eigen::Index k = 0; k < indicator.rows(); ++k)
        mask[std::size_t(k)] = indicator(k, 0) >= indicator(k, 1) ? 1 : 0;
    return mask;
}

inline InstanceEval eval_erm(ErmModel& m, const Instance& inst) {
    Tape t;
    SeqEncoding v = m.video.encode(t, t.constant(inst.video.clips));
    SeqEncoding q = m.question.encode(t, t.constant(inst.question.tokens));
    BackbonePrediction pred = m.backbone.predict(t, v.local, q);
    InstanceEval out;
    out.predicted = argmax_index(t.val(pred.pred.probs));
    out.log_loss = t.scalar(causal_loss(t, pred.pred, inst.question.answer));
    return out;
}

inline InstanceEval eval_igv(IgvModel& m, const Instance& inst, const EvalOptions& opts) {
    Tape t;
    SeqEncoding v = m.video.encode(t, t.constant(inst.video.clips));
    SeqEncoding q = m.question.encode(t, t.constant(inst.question.tokens));
    AttentionScores scores = m.grounding.attention_scores(t, v.local, q.global);
    Var indicator = score_argmax_indicator(t, scores);
    SceneSplit split = split_select(t, v.local, indicator, scores);
    BackbonePrediction pred = m.backbone.predict(t, split.causal, q);

    InstanceEval out;
    out.predicted = argmax_index(t.val(pred.pred.probs));
    out.log_loss = t.scalar(causal_loss(t, pred.pred, inst.question.answer));
    const Mat& ind = t.val(split.indicator);
    out.grounding = grounding_overlap(indicator_causal_mask(ind), inst.video.causal_mask);
    if (opts.dumps)
        opts.dumps->push_back(
            mask_dump_entry(inst.video.id, t.val(scores.p_c), ind, inst.video.causal_mask));
    return out;
}

inline InstanceEval eval_eigv(EigvModel& m, const Instance& inst, const EvalOptions& opts) {
    Tape t;
    Var v = m.video.embed(t, t.constant(inst.video.clips));
    SeqEncoding q = m.question.encode(t, t.constant(inst.question.tokens));
    BackbonePrediction pred = m.backbone.predict(t, v, q);

    InstanceEval out;
    out.predicted = argmax_index(t.val(pred.pred.probs));
    out.log_loss = t.scalar(causal_loss(t, pred.pred, inst.question.answer));

    AttentionScores scores = m.grounding.attention_scores(t, v, q.global);
    Var indicator = score_argmax_indicator(t, scores);
    const Mat& ind = t.val(indicator);
    out.grounding = grounding_overlap(indicator_causal_mask(ind), inst.video.causal_mask);
    if (opts.dumps)
        opts.dumps->push_back(
            mask_dump_entry(inst.video.id, t.val(scores.p_c), ind, inst.video.causal_mask));
    return out;
}

inline InstanceEval eval_transtr(TranstrModel& m, const Mechanism& mech, const Instance& inst,
                                 const EvalOptions& opts) {
    Tape t;
    Rng unused(0); // inference-mode selection draws nothing
    Var frames = m.frames.embed(t, t.constant(inst.video.clips));
    Var qrows = m.question.embed(t, t.constant(inst.question.tokens));
    SelectionResult temporal =
        m.rationalizer.temporal_rationalize(t, frames, qrows, SelectionMode::infer, unused);

    std::vector<Var> per_frame;
    std::vector<SelectionResult> spatial;
    for (Eigen::Index idx : temporal.indices) {
        if (inst.video.objects.empty()) {
            per_frame.push_back(Var{});
            continue;
        }
        Var frame = t.slice_rows(temporal.selected, Eigen::Index(per_frame.size()), 1);
        Var objs = m.objects.embed(t, t.constant(inst.video.objects[std::size_t(idx)]));
        SelectionResult sel =
            m.rationalizer.spatial_rationalize(t, frame, objs, qrows, SelectionMode::infer,
                                               unused);
        per_frame.push_back(sel.selected);
        spatial.push_back(sel);
    }
    Var memory = m.rationalizer.mgr(t, temporal.selected, per_frame, qrows);
    Var cands = m.candidates.embed(t, t.constant(mech.centroids));
    Var logits = m.rationalizer.decode_mc(t, cands, memory);
    PredictionDistribution pred = make_prediction(t, logits);

    InstanceEval out;
    out.predicted = argmax_index(t.val(pred.probs));
    out.log_loss = t.scalar(causal_loss(t, pred, inst.question.answer));
    std::vector<int> mask(inst.video.causal_mask.size(), 0);
    for (Eigen::Index idx : temporal.indices) mask[std::size_t(idx)] = 1;
    out.grounding = grounding_overlap(mask, inst.video.causal_mask);
    if (opts.dumps)
        opts.dumps->push_back(selection_dump_entry(inst.video.id, temporal, spatial));
    return out;
}

} // namespace detail

inline MetricsRecord evaluate_split(Model& model, const DatasetBundle& data,
                                    const std::string& split_name,
                                    const EvalOptions& opts = {}) {
    const std::vector<Instance>& instances = data.split(split_name);
    if (instances.empty())
        throw DegenerateInputError("evaluate_split: split '" + split_name + "' is empty");

    long correct = 0;
    double loss_sum = 0.0;
    GroundingMetrics gsum;
    bool has_grounding = false;

    for (const Instance& inst : instances) {
        detail::InstanceEval e;
        switch (model.method()) {
            case Method::erm: e = detail::eval_erm(model.erm(), inst); break;
            case Method::igv: e = detail::eval_igv(model.igv(), inst, opts); break;
            case Method::eigv: e = detail::eval_eigv(model.eigv(), inst, opts); break;
            case Method::transtr:
                e = detail::eval_transtr(model.transtr(), data.mechanism, inst, opts);
                break;
        }
        correct += e.predicted == inst.question.answer;
        loss_sum += e.log_loss;
        if (e.grounding) {
            has_grounding = true;
            gsum.precision += e.grounding->precision;
            gsum.recall += e.grounding->recall;
            gsum.iou += e.grounding->iou;
        }
    }

    MetricsRecord rec;
    rec.split = split_name;
    rec.accuracy = double(correct) / double(instances.size());
    rec.losses["loss"] = loss_sum / double(instances.size());
    if (has_grounding) {
        double n = double(instances.size());
        rec.grounding = GroundingMetrics{gsum.precision / n, gsum.recall / n, gsum.iou / n};
    }
    validate_metrics(rec);
    return rec;
}

// Rebuilds the model a checkpoint describes and evaluates it. The checkpoint
// carries its own configuration echo, so a run directory plus a dataset is
// enough to reproduce any stored evaluation.
inline MetricsRecord evaluate_checkpoint(const std::string& checkpoint_path,
                                         const DatasetBundle& data,
                                         const std::string& split_name,
                                         const EvalOptions& opts = {}) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    RunConfig cfg = run_config_from_json(ck.config);
    Model model(cfg, dims_of(data));
    apply_checkpoint(ck, model.params());
    return evaluate_split(model, data, split_name, opts);
}

} // namespace groundqa
