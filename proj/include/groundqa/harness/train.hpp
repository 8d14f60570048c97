#pragma once

// Training loops for the four methods: per-instance tapes with gradient
// accumulation over a batch, a shared optimizer step, per-epoch validation
// with best-checkpoint persistence, and divergence abort with a diagnostic.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "groundqa/harness/evaluate.hpp"
#include "groundqa/intervention.hpp"
#include "groundqa/objectives.hpp"

namespace groundqa {

// Stochastic gradient descent with classical momentum; the default. Velocity
// buffers are keyed by position in the parameter list, which is stable for
// the lifetime of a model.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(const std::vector<Param*>& params, double grad_scale) {
        if (velocity_.empty())
            for (const Param* p : params)
                velocity_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity_[i] = momentum_ * velocity_[i] - lr_ * grad_scale * params[i]->grad;
            params[i]->value += velocity_[i];
        }
    }

    double lr() const { return lr_; }
    void halve() { lr_ *= 0.5; }

private:
    double lr_, momentum_;
    std::vector<Mat> velocity_;
};

class Adam {
public:
    explicit Adam(double lr) : lr_(lr) {}

    void step(const std::vector<Param*>& params, double grad_scale) {
        if (m_.empty())
            for (const Param* p : params) {
                m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
                v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
            }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, double(t_));
        double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Mat g = grad_scale * params[i]->grad;
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            params[i]->value -=
                lr_ * mhat.cwiseQuotient(vhat.cwiseSqrt() + Mat::Constant(vhat.rows(), vhat.cols(), eps_));
        }
    }

    double lr() const { return lr_; }
    void halve() { lr_ *= 0.5; }

private:
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

namespace detail {

class Optimizer {
public:
    Optimizer(const RunConfig& cfg)
        : kind_(cfg.optimizer), sgd_(cfg.learning_rate, cfg.momentum), adam_(cfg.learning_rate) {}

    void step(const std::vector<Param*>& params, double grad_scale) {
        if (kind_ == OptimizerKind::sgd) sgd_.step(params, grad_scale);
        else adam_.step(params, grad_scale);
    }

    void halve() {
        if (kind_ == OptimizerKind::sgd) sgd_.halve();
        else adam_.halve();
    }

    double lr() const { return kind_ == OptimizerKind::sgd ? sgd_.lr() : adam_.lr(); }

private:
    OptimizerKind kind_;
    SgdMomentum sgd_;
    Adam adam_;
};

// Bounded collection of recent question representations used to draw the
// question-swap negatives. A ring buffer: entries are overwritten oldest
// first once the capacity is reached.
struct QuestionRing {
    explicit QuestionRing(std::size_t capacity) : capacity_(capacity) {}

    void push(const std::string& id, const Mat& q_global) {
        if (entries_.size() < capacity_) {
            entries_.push_back({id, q_global});
        } else {
            entries_[cursor_] = {id, q_global};
            cursor_ = (cursor_ + 1) % capacity_;
        }
    }

    bool has_other(const std::string& id) const {
        for (const QuestionPoolEntry& e : entries_)
            if (e.id != id) return true;
        return false;
    }

    const std::vector<QuestionPoolEntry>& entries() const { return entries_; }

private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<QuestionPoolEntry> entries_;
};

// Environment rows of a hard mask-mode split, gathered for the memory bank.
// Degenerate all-causal draws contribute nothing.
inline void bank_insert_from_mask(MemoryBank& bank, const Tape& t, const SceneSplit& split) {
    const Mat& ind = t.val(split.indicator);
    const Mat& env = t.val(split.environment);
    std::vector<Eigen::Index> positions;
    for (Eigen::Index k = 0; k < ind.rows(); ++k)
        if (ind(k, 1) >= ind(k, 0)) positions.push_back(k);
    if (positions.empty()) return;
    EnvScene scene;
    scene.rows = Mat(Eigen::Index(positions.size()), env.cols());
    for (std::size_t i = 0; i < positions.size(); ++i)
        scene.rows.row(Eigen::Index(i)) = env.row(positions[i]);
    scene.positions = positions;
    bank.insert(std::move(scene));
}

inline Mat one_hot_row(int index, int width) {
    Mat row = Mat::Zero(1, width);
    row(0, index) = 1.0;
    return row;
}

struct StepOutcome {
    double loss = 0.0;
    std::map<std::string, double> losses;
    int predicted = 0;
    int target = 0;
};

inline StepOutcome step_erm(ErmModel& m, const Instance& inst, int answer) {
    Tape t;
    SeqEncoding v = m.video.encode(t, t.constant(inst.video.clips));
    SeqEncoding q = m.question.encode(t, t.constant(inst.question.tokens));
    BackbonePrediction pred = m.backbone.predict(t, v.local, q);
    Var loss = causal_loss(t, pred.pred, answer);

    StepOutcome out;
    out.loss = t.scalar(loss);
    out.losses["loss"] = out.loss;
    out.predicted = argmax_index(t.val(pred.pred.probs));
    out.target = answer;
    if (std::isfinite(out.loss)) t.backward(loss);
    return out;
}

inline StepOutcome step_igv(IgvModel& m, const RunConfig& cfg, const Instance& inst,
                            MemoryBank& bank, Rng& rng) {
    Tape t;
    SeqEncoding v = m.video.encode(t, t.constant(inst.video.clips));
    SeqEncoding q = m.question.encode(t, t.constant(inst.question.tokens));
    AttentionScores scores = m.grounding.attention_scores(t, v.local, q.global);
    Var indicator = gumbel_indicator(t, scores, cfg.gumbel_temperature, /*hard=*/true, rng);
    SceneSplit split = split_select(t, v.local, indicator, scores);
    bank.insert_from_split(t, split);
    Var v_star = intervene_environment(t, split, bank, rng);

    BackbonePrediction pred_c = m.backbone.predict(t, split.causal, q);
    BackbonePrediction pred_e = m.backbone.predict(t, split.environment, q);
    BackbonePrediction pred_v = m.backbone.predict(t, v_star, q);

    Var l_c = causal_loss(t, pred_c.pred, inst.question.answer);
    Var l_e = environment_loss(t, pred_e.pred);
    Var l_v = consistency_loss(t, pred_v.pred, pred_c.pred);
    LossWeights weights;
    weights.igv_lambda1 = cfg.igv_lambda1;
    weights.igv_lambda2 = cfg.igv_lambda2;
    Var loss = igv_objective(t, l_c, l_e, l_v, weights);

    StepOutcome out;
    out.loss = t.scalar(loss);
    out.losses["loss"] = out.loss;
    out.losses["causal"] = t.scalar(l_c);
    out.losses["environment"] = t.scalar(l_e);
    out.losses["consistency"] = t.scalar(l_v);
    out.predicted = argmax_index(t.val(pred_c.pred.probs));
    out.target = inst.question.answer;
    if (std::isfinite(out.loss)) t.backward(loss);
    return out;
}

inline StepOutcome step_eigv(EigvModel& m, const RunConfig& cfg, const Instance& anchor,
                             const Instance& partner, int num_answers, MemoryBank& bank,
                             QuestionRing& pool, Rng& rng) {
    Tape t;

    struct Grounded {
        SeqEncoding q;
        SceneSplit split;
    };
    auto ground = [&](const Instance& inst) {
        Var v = m.video.embed(t, t.constant(inst.video.clips));
        SeqEncoding q = m.question.encode(t, t.constant(inst.question.tokens));
        AttentionScores scores = m.grounding.attention_scores(t, v, q.global);
        Var indicator = gumbel_indicator(t, scores, cfg.gumbel_temperature, /*hard=*/true, rng);
        return Grounded{q, split_mask(t, v, indicator)};
    };

    Grounded a = ground(anchor);
    Grounded b = ground(partner);
    bank_insert_from_mask(bank, t, a.split);
    bank_insert_from_mask(bank, t, b.split);

    MixCoefficients mix = draw_mix(rng, cfg.alpha);
    Var label_a = t.constant(one_hot_row(anchor.question.answer, num_answers));
    Var label_b = t.constant(one_hot_row(partner.question.answer, num_answers));
    InterventionSample sample =
        make_intervention_sample(t, a.split, a.q.global, label_a, anchor.video.id, b.split,
                                 b.q.global, label_b, partner.video.id, mix);

    SeqEncoding q_star{sample.q_star, sample.q_star};
    BackbonePrediction pred = m.backbone.predict(t, sample.v_star, q_star);
    Var l_erm = soft_cross_entropy(t, pred.pred, sample.a_star);

    Var l_cl = t.zeros(1, 1);
    if (pool.has_other(anchor.video.id)) {
        ContrastiveConfig ccfg;
        ccfg.num_negatives = cfg.num_negatives;
        ccfg.detach_regrounding = cfg.detach_regrounding;
        ccfg.temperature = cfg.gumbel_temperature;
        ContrastiveSet set = build_contrastive(t, m.grounding, sample.v_star, sample.q_star,
                                               anchor.video.id, bank, pool.entries(), ccfg, rng);
        auto represent = [&](const VQPair& pair) {
            SeqEncoding q{pair.question, pair.question};
            return m.backbone.predict(t, pair.video, q).fused.s_final;
        };
        Var anchor_rep = pred.fused.s_final;
        Var positive_rep = represent(set.positive);
        std::vector<Var> negative_reps;
        negative_reps.reserve(set.negatives.size());
        for (const VQPair& neg : set.negatives) negative_reps.push_back(represent(neg));
        l_cl = info_nce(t, anchor_rep, positive_rep, negative_reps);
    }
    Var loss = eigv_objective(t, l_erm, l_cl, cfg.beta);

    pool.push(anchor.video.id, t.val(a.q.global));
    pool.push(partner.video.id, t.val(b.q.global));

    StepOutcome out;
    out.loss = t.scalar(loss);
    out.losses["loss"] = out.loss;
    out.losses["erm"] = t.scalar(l_erm);
    out.losses["contrastive"] = t.scalar(l_cl);
    out.predicted = argmax_index(t.val(pred.pred.probs));
    out.target = argmax_index(t.val(sample.a_star));
    if (std::isfinite(out.loss)) t.backward(loss);
    return out;
}

inline StepOutcome step_transtr(TranstrModel& m, const Mechanism& mech, const Instance& inst,
                                Rng& rng) {
    Tape t;
    Var frames = m.frames.embed(t, t.constant(inst.video.clips));
    Var qrows = m.question.embed(t, t.constant(inst.question.tokens));
    SelectionResult temporal =
        m.rationalizer.temporal_rationalize(t, frames, qrows, SelectionMode::train, rng);

    std::vector<Var> per_frame;
    for (Eigen::Index idx : temporal.indices) {
        if (inst.video.objects.empty()) {
            per_frame.push_back(Var{});
            continue;
        }
        Var frame = t.slice_rows(temporal.selected, Eigen::Index(per_frame.size()), 1);
        Var objs = m.objects.embed(t, t.constant(inst.video.objects[std::size_t(idx)]));
        per_frame.push_back(
            m.rationalizer.spatial_rationalize(t, frame, objs, qrows, SelectionMode::train, rng)
                .selected);
    }
    Var memory = m.rationalizer.mgr(t, temporal.selected, per_frame, qrows);
    Var cands = m.candidates.embed(t, t.constant(mech.centroids));
    Var logits = m.rationalizer.decode_mc(t, cands, memory);
    PredictionDistribution pred = make_prediction(t, logits);
    Var loss = causal_loss(t, pred, inst.question.answer);

    StepOutcome out;
    out.loss = t.scalar(loss);
    out.losses["loss"] = out.loss;
    out.predicted = argmax_index(t.val(pred.probs));
    out.target = inst.question.answer;
    if (std::isfinite(out.loss)) t.backward(loss);
    return out;
}

} // namespace detail

// Runs the configured method over the bundle and writes the run directory:
// config.txt, metrics.jsonl (one epoch per line, deterministic), the best
// validation checkpoint, and runrecord.json (the only file carrying wall
// clock). A non-finite training loss aborts with the diagnostic recorded.
inline RunRecord train(const RunConfig& cfg, const DatasetBundle& data,
                       const std::string& run_dir) {
    cfg.validate();
    if (data.train.empty()) throw DegenerateInputError("train: empty training split");
    if (data.val.empty()) throw DegenerateInputError("train: empty validation split");

    namespace fs = std::filesystem;
    fs::create_directories(run_dir);
    {
        std::ofstream cfg_out(run_dir + "/config.txt");
        cfg_out << run_config_text(cfg);
    }

    Model model(cfg, dims_of(data));
    std::vector<Param*> params = model.params();
    detail::Optimizer opt(cfg);
    Rng rng(derive_seed(cfg.seed, {kTrainStream}));
    MemoryBank bank(cfg.bank_capacity);
    detail::QuestionRing pool(cfg.pool_capacity);

    RunRecord rec;
    rec.config = cfg;
    rec.checkpoint_path = run_dir + "/checkpoint.gqcp";
    nlohmann::json cfg_echo = run_config_to_json(cfg);

    std::ofstream metrics_out(run_dir + "/metrics.jsonl");
    if (!metrics_out) throw StateError("train: cannot write metrics in " + run_dir);

    const auto started = std::chrono::steady_clock::now();
    double best_val = -1.0;
    int stale_epochs = 0;

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    for (int epoch = 0; epoch < cfg.epochs && !rec.diverged; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        std::map<std::string, double> loss_sums;
        long correct = 0;
        long seen = 0;

        for (std::size_t at = 0; at < order.size() && !rec.diverged;
             at += std::size_t(cfg.batch_size)) {
            std::size_t stop = std::min(order.size(), at + std::size_t(cfg.batch_size));
            for (Param* p : params) p->zero_grad();
            for (std::size_t i = at; i < stop; ++i) {
                const Instance& inst = data.train[order[i]];
                detail::StepOutcome step;
                switch (cfg.method) {
                    case Method::erm:
                        step = detail::step_erm(model.erm(), inst, inst.question.answer);
                        break;
                    case Method::igv:
                        step = detail::step_igv(model.igv(), cfg, inst, bank, rng);
                        break;
                    case Method::eigv: {
                        std::size_t pick = rng.index(order.size());
                        if (order.size() > 1 && pick == order[i])
                            pick = (pick + 1) % order.size();
                        step = detail::step_eigv(model.eigv(), cfg, inst, data.train[pick],
                                                 data.config.num_answers, bank, pool, rng);
                        break;
                    }
                    case Method::transtr:
                        step = detail::step_transtr(model.transtr(), data.mechanism, inst, rng);
                        break;
                }
                if (!std::isfinite(step.loss)) {
                    rec.diverged = true;
                    rec.diagnostic = {{"epoch", epoch},
                                      {"instance", inst.video.id},
                                      {"loss", step.loss},
                                      {"learning_rate", opt.lr()}};
                    break;
                }
                for (const auto& [name, value] : step.losses) loss_sums[name] += value;
                correct += step.predicted == step.target;
                ++seen;
            }
            if (rec.diverged) break;
            opt.step(params, 1.0 / double(stop - at));
        }
        if (rec.diverged) break;

        MetricsRecord train_rec;
        train_rec.split = "train";
        train_rec.accuracy = double(correct) / double(seen);
        for (const auto& [name, value] : loss_sums)
            train_rec.losses[name] = value / double(seen);
        validate_metrics(train_rec);

        MetricsRecord val_rec = evaluate_split(model, data, "val");
        rec.epochs.push_back({epoch, train_rec, val_rec});
        metrics_out << epoch_to_json(rec.epochs.back()).dump() << "\n";

        if (val_rec.accuracy > best_val) {
            best_val = val_rec.accuracy;
            rec.best_epoch = epoch;
            rec.best_val_accuracy = val_rec.accuracy;
            save_checkpoint(rec.checkpoint_path, cfg_echo, params);
            stale_epochs = 0;
        } else if (cfg.optimizer == OptimizerKind::adam) {
            if (++stale_epochs >= cfg.plateau_patience) {
                opt.halve();
                stale_epochs = 0;
            }
        }
    }

    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    {
        std::ofstream record_out(run_dir + "/runrecord.json");
        record_out << run_record_to_json(rec).dump(2) << "\n";
    }
    return rec;
}

} // namespace groundqa
