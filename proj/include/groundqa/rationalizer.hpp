#pragma once

// Spatio-temporal rationalization: perturbed-maximum differentiable Top-K,
// adaptive frame and object selection from cross-attention interaction maps,
// multi-granularity reasoning over the survivors, and query-style answer
// decoding for multi-choice and open-ended settings.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/layers.hpp"
#include "groundqa/core/rng.hpp"
#include "groundqa/core/tape.hpp"

namespace groundqa {

// ---------------------------------------------------------------------------
// Differentiable Top-K via the perturbed maximum method.

// Indices of the k largest entries of a 1 x n row, by descending value with
// ties broken toward the lower index.
inline std::vector<Eigen::Index> topk_indices(const Mat& row, int k) {
    if (row.rows() != 1) throw ShapeError("topk_indices: need a row vector");
    Eigen::Index n = row.cols();
    if (k < 1 || Eigen::Index(k) > n) throw ConfigError("topk_indices: need 1 <= k <= n");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return row(0, a) > row(0, b); });
    order.resize(std::size_t(k));
    return order;
}

inline Mat hard_topk_mask(const Mat& row, int k) {
    Mat mask = Mat::Zero(1, row.cols());
    for (Eigen::Index i : topk_indices(row, k)) mask(0, i) = 1.0;
    return mask;
}

// Monte-Carlo mean of hard Top-K indicators of (scores + sigma * noise); the
// backward pass applies the perturbed-optimizer Jacobian estimate
// J = sum_s y_s^T z_s / (S * sigma) accumulated at forward time.
inline Var perturbed_topk_with_noise(Tape& t, Var scores, int k, double sigma,
                                     const Mat& noise) {
    const Mat& th = t.val(scores);
    if (th.rows() != 1) throw ShapeError("perturbed_topk: scores must be a row vector");
    Eigen::Index n = th.cols();
    if (k < 1 || Eigen::Index(k) > n) throw ConfigError("perturbed_topk: need 1 <= K <= n");
    if (sigma <= 0.0) throw ConfigError("perturbed_topk: sigma must be positive");
    if (noise.cols() != n || noise.rows() < 1)
        throw ShapeError("perturbed_topk: noise must be S x n with S >= 1");

    Eigen::Index S = noise.rows();
    Mat mask = Mat::Zero(1, n);
    Mat jac = Mat::Zero(n, n);
    for (Eigen::Index s = 0; s < S; ++s) {
        Mat z = th + sigma * noise.row(s);
        Mat y = hard_topk_mask(z, k);
        mask += y;
        jac.noalias() += y.transpose() * noise.row(s);
    }
    mask /= double(S);
    jac /= double(S) * sigma;

    return t.custom(mask, {scores}, [scores, jac](Tape& tt, Var out) {
        tt.accum(scores, tt.grad_of(out) * jac);
    });
}

inline Var perturbed_topk(Tape& t, Var scores, int k, double sigma, int samples, Rng& rng) {
    if (samples < 1) throw ConfigError("perturbed_topk: need at least one sample");
    Mat noise(samples, t.cols(scores));
    for (Eigen::Index r = 0; r < noise.rows(); ++r)
        for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = rng.normal();
    return perturbed_topk_with_noise(t, scores, k, sigma, noise);
}

// ---------------------------------------------------------------------------
// Attention building blocks (single head, bias-free projections, residual).

struct CrossAttentionOutput {
    Var tokens;   // T x d_h
    Var attn_map; // T x L, rows on the simplex
};

class AttentionLayer {
  public:
    AttentionLayer() = default;
    AttentionLayer(const std::string& name, int d_h, Rng& rng)
        : d_h_(d_h), wq_(name + ".q", d_h, d_h, rng), wk_(name + ".k", d_h, d_h, rng),
          wv_(name + ".v", d_h, d_h, rng) {
        if (d_h < 1) throw ConfigError("AttentionLayer: d_h must be positive");
    }

    CrossAttentionOutput operator()(Tape& t, Var queries, Var keys_values) {
        if (t.cols(queries) != d_h_ || t.cols(keys_values) != d_h_)
            throw ShapeError("AttentionLayer: input width mismatch");
        Var q = wq_(t, queries);
        Var k = wk_(t, keys_values);
        Var logits = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(double(d_h_)));
        Var attn = t.softmax_rows(logits);
        Var out = t.add(t.matmul(attn, wv_(t, keys_values)), queries);
        return {out, attn};
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, wq_.params());
        collect(out, wk_.params());
        collect(out, wv_.params());
        return out;
    }

    Linear& wq() { return wq_; }
    Linear& wk() { return wk_; }
    Linear& wv() { return wv_; }

  private:
    int d_h_ = 0;
    Linear wq_;
    Linear wk_;
    Linear wv_;
};

class TransformerLayer {
  public:
    TransformerLayer() = default;
    TransformerLayer(const std::string& name, int d_h, Rng& rng)
        : attn_(name + ".attn", d_h, rng), ffn1_(name + ".ffn1", d_h, d_h, rng),
          ffn2_(name + ".ffn2", d_h, d_h, rng) {}

    Var operator()(Tape& t, Var rows) {
        Var h = attn_(t, rows, rows).tokens;
        return t.add(ffn2_(t, t.relu(ffn1_(t, h))), h);
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, attn_.params());
        collect(out, ffn1_.params());
        collect(out, ffn2_.params());
        return out;
    }

    AttentionLayer& attn() { return attn_; }

  private:
    AttentionLayer attn_;
    Affine ffn1_;
    Affine ffn2_;
};

// ---------------------------------------------------------------------------
// Selection from an interaction map.

enum class SelectionMode { train, infer };

struct SelectionResult {
    Var selected;                      // C x d_h
    std::vector<Eigen::Index> indices; // strictly increasing, C entries
    Var weights;                       // 1 x T per-row selection weight
};

struct TopKConfig {
    double sigma = 0.5;
    int samples = 100;
};

// Top-K over the flattened T x L interaction map, deduplicated to distinct
// row (frame/object) indices without backfill, gathering the survivors.
// Training keeps the gathered rows at full strength through a straight-
// through scale whose gradient flows into the perturbed soft mask.
inline SelectionResult select_from_map(Tape& t, Var tokens, Var attn_map, int k_sel,
                                       SelectionMode mode, const TopKConfig& cfg, Rng& rng) {
    Eigen::Index T = t.rows(attn_map);
    Eigen::Index L = t.cols(attn_map);
    if (t.rows(tokens) != T) throw ShapeError("select_from_map: tokens/map row mismatch");
    if (k_sel < 1) throw ConfigError("select_from_map: need K >= 1");
    int k_eff = int(std::min<Eigen::Index>(k_sel, T * L));

    Var flat = t.flatten_rm(attn_map); // 1 x (T*L)
    Var mask = (mode == SelectionMode::train)
                   ? perturbed_topk(t, flat, k_eff, cfg.sigma, cfg.samples, rng)
                   : t.constant(hard_topk_mask(t.val(flat), k_eff));

    std::vector<Eigen::Index> picked; // distinct rows, first hit wins
    for (Eigen::Index f : topk_indices(t.val(flat), k_eff)) {
        Eigen::Index row = f / L;
        if (std::find(picked.begin(), picked.end(), row) == picked.end()) picked.push_back(row);
    }
    std::sort(picked.begin(), picked.end());

    SelectionResult out;
    out.indices = picked;
    out.weights = t.transpose(t.row_max(t.reshape_rm(mask, T, L))); // 1 x T
    Var w_sel = t.select_rows(t.transpose(out.weights), picked);    // C x 1
    Var gathered = t.select_rows(tokens, picked);
    if (mode == SelectionMode::train) {
        Var st = t.straight_through(Mat::Ones(Eigen::Index(picked.size()), 1), w_sel);
        out.selected = t.scale_rows(gathered, st);
    } else {
        out.selected = t.scale_rows(gathered, w_sel);
    }
    return out;
}

// ---------------------------------------------------------------------------
// The rationalizer: selection, reasoning, decoding.

struct RationalizerConfig {
    int d_h = 0;
    int K_f = 5;
    int K_o = 12;
    TopKConfig topk;

    void validate() const {
        if (d_h < 2) throw ConfigError("RationalizerConfig: d_h must be at least 2");
        if (K_f < 1 || K_o < 1) throw ConfigError("RationalizerConfig: K_f and K_o must be >= 1");
        if (topk.sigma <= 0.0 || topk.samples < 1)
            throw ConfigError("RationalizerConfig: bad perturbation settings");
    }
};

class Rationalizer {
  public:
    Rationalizer() = default;
    Rationalizer(const std::string& name, const RationalizerConfig& cfg, int vocab_size, Rng& rng)
        : cfg_(cfg), frame_self_(name + ".frame_self", cfg.d_h, rng),
          frame_cross_(name + ".frame_cross", cfg.d_h, rng),
          object_self_(name + ".object_self", cfg.d_h, rng),
          object_cross_(name + ".object_cross", cfg.d_h, rng),
          enhance_(name + ".enhance", cfg.d_h, rng), mgr_layer_(name + ".mgr", cfg.d_h, rng),
          decoder_(name + ".decoder", cfg.d_h, rng),
          dec_ffn1_(name + ".dec_ffn1", cfg.d_h, cfg.d_h, rng),
          dec_ffn2_(name + ".dec_ffn2", cfg.d_h, cfg.d_h, rng),
          head_mc_(name + ".head_mc", cfg.d_h, 1, rng),
          u_oe_(name + ".u_oe", init_matrix(rng, 1, cfg.d_h, 1.0 / std::sqrt(double(cfg.d_h)))),
          head_oe_(name + ".head_oe", cfg.d_h, vocab_size, rng) {
        cfg.validate();
        if (vocab_size < 2) throw ConfigError("Rationalizer: vocab_size must be at least 2");
    }

    // Frames contextualized, cross-attended against the question; the K_f
    // strongest interactions pick the critical frames.
    SelectionResult temporal_rationalize(Tape& t, Var frames, Var question, SelectionMode mode,
                                         Rng& rng) {
        Var ctx = frame_self_(t, frames, frames).tokens;
        CrossAttentionOutput co = frame_cross_(t, ctx, question);
        return select_from_map(t, co.tokens, co.attn_map, cfg_.K_f, mode, cfg_.topk, rng);
    }

    // Same mechanism per frame over its S object tokens; the frame row only
    // anchors the call (selection reads the objects and the question).
    SelectionResult spatial_rationalize(Tape& t, Var frame, Var objects, Var question,
                                        SelectionMode mode, Rng& rng) {
        if (t.rows(frame) != 1 || t.cols(frame) != cfg_.d_h)
            throw ShapeError("spatial_rationalize: frame must be 1 x d_h");
        if (t.rows(objects) < 1)
            throw DegenerateInputError("spatial_rationalize: need at least one object");
        Var ctx = object_self_(t, objects, objects).tokens;
        CrossAttentionOutput co = object_cross_(t, ctx, question);
        return select_from_map(t, co.tokens, co.attn_map, cfg_.K_o, mode, cfg_.topk, rng);
    }

    // Intra-frame aggregation: each frame cross-attends its own selected
    // objects with a residual; a frame with no objects passes through.
    Var object_enhance(Tape& t, Var frames, const std::vector<Var>& objects_per_frame) {
        Eigen::Index C = t.rows(frames);
        if (Eigen::Index(objects_per_frame.size()) != C)
            throw ShapeError("object_enhance: one object set per frame required");
        std::vector<Var> rows;
        rows.reserve(std::size_t(C));
        for (Eigen::Index i = 0; i < C; ++i) {
            Var f = t.slice_rows(frames, i, 1);
            Var o = objects_per_frame[std::size_t(i)];
            rows.push_back(o.valid() ? enhance_(t, f, o).tokens : f);
        }
        return t.concat_rows(rows);
    }

    Var mgr(Tape& t, Var frames, const std::vector<Var>& objects_per_frame, Var question) {
        Var enhanced = object_enhance(t, frames, objects_per_frame);
        return mgr_layer_(t, t.concat_rows({enhanced, question}));
    }

    // Candidate summaries: mean-pooled token features per candidate.
    Var summarize_candidates(Tape& t, const std::vector<Var>& candidate_tokens) {
        if (candidate_tokens.empty())
            throw DegenerateInputError("summarize_candidates: no candidates");
        std::vector<Var> rows;
        rows.reserve(candidate_tokens.size());
        for (Var c : candidate_tokens)
            rows.push_back(t.scale(t.col_sum(c), 1.0 / double(t.rows(c))));
        return t.concat_rows(rows);
    }

    // Decoder rows are independent given M and carry no position signal, so
    // permuting the queries permutes the logits identically.
    Var decode_rows(Tape& t, Var queries, Var memory) {
        Var h = decoder_(t, queries, memory).tokens;
        return t.add(dec_ffn2_(t, t.relu(dec_ffn1_(t, h))), h);
    }

    Var decode_mc(Tape& t, Var queries, Var memory) {
        return t.transpose(head_mc_(t, decode_rows(t, queries, memory)));
    }

    Var decode_oe(Tape& t, Var memory) {
        return head_oe_(t, decode_rows(t, t.use(u_oe_), memory));
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, frame_self_.params());
        collect(out, frame_cross_.params());
        collect(out, object_self_.params());
        collect(out, object_cross_.params());
        collect(out, enhance_.params());
        collect(out, mgr_layer_.params());
        collect(out, decoder_.params());
        collect(out, dec_ffn1_.params());
        collect(out, dec_ffn2_.params());
        collect(out, head_mc_.params());
        out.push_back(&u_oe_);
        collect(out, head_oe_.params());
        return out;
    }

    const RationalizerConfig& config() const { return cfg_; }
    AttentionLayer& enhance_layer() { return enhance_; }
    AttentionLayer& frame_cross_layer() { return frame_cross_; }
    Param& oe_query() { return u_oe_; }

  private:
    RationalizerConfig cfg_;
    AttentionLayer frame_self_;
    AttentionLayer frame_cross_;
    AttentionLayer object_self_;
    AttentionLayer object_cross_;
    AttentionLayer enhance_;
    TransformerLayer mgr_layer_;
    AttentionLayer decoder_;
    Affine dec_ffn1_;
    Affine dec_ffn2_;
    Affine head_mc_;
    Param u_oe_;
    Affine head_oe_;
};

// Per-instance rationale dump for inspection.
inline nlohmann::json selection_dump_entry(const std::string& id,
                                           const SelectionResult& temporal,
                                           const std::vector<SelectionResult>& spatial) {
    nlohmann::json entry;
    entry["id"] = id;
    entry["frame_indices"] = std::vector<long>(temporal.indices.begin(), temporal.indices.end());
    std::vector<std::vector<long>> per_frame;
    per_frame.reserve(spatial.size());
    for (const SelectionResult& s : spatial)
        per_frame.emplace_back(s.indices.begin(), s.indices.end());
    entry["objects_per_frame_indices"] = per_frame;
    return entry;
}

} // namespace groundqa
