#pragma once

// Sequence encoders producing local (per-step) and global (sequence-level)
// representations for clips and question tokens, plus the linear per-clip
// embedding used by the mask-mode grounding pipeline.

#include <string>
#include <vector>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/layers.hpp"
#include "groundqa/core/tape.hpp"

namespace groundqa {

// Local rows are per-position hidden states; global is the final hidden
// state (concatenated across directions when bidirectional).
struct SeqEncoding {
    Var local;  // T x d_h
    Var global; // 1 x d_h
};

// Single-layer LSTM, optionally bidirectional. Gate layout in the packed
// projection is [input | forget | cell | output]; each direction owns one
// combined weight over [x_t, h_{t-1}] and one bias. In the bidirectional
// case the hidden size is split between directions and per-position rows are
// direction-concatenated, so d_h is the width either way.
class SequenceEncoder {
public:
    SequenceEncoder() = default;

    SequenceEncoder(const std::string& name, int in_dim, int d_h, bool bidirectional, Rng& rng)
        : in_dim_(in_dim), d_h_(d_h), bi_(bidirectional) {
        if (in_dim < 1 || d_h < 1) throw ConfigError("SequenceEncoder: dims must be positive");
        if (bidirectional && d_h < 2)
            throw ConfigError("SequenceEncoder: bidirectional needs d_h >= 2");
        h_fwd_ = bi_ ? d_h / 2 : d_h;
        h_bwd_ = bi_ ? d_h - h_fwd_ : 0;
        fwd_ = make_dir(name + ".fwd", in_dim, h_fwd_, rng);
        if (bi_) bwd_ = make_dir(name + ".bwd", in_dim, h_bwd_, rng);
    }

    SeqEncoding encode(Tape& t, Var seq) {
        if (t.rows(seq) < 1) throw DegenerateInputError("SequenceEncoder: empty sequence");
        if (t.cols(seq) != in_dim_)
            throw ShapeError("SequenceEncoder: input width " + std::to_string(t.cols(seq)) +
                             ", expected " + std::to_string(in_dim_));
        Var f_stack = run_direction(t, seq, fwd_, h_fwd_, false);
        if (!bi_) {
            Var global = t.slice_rows(f_stack, t.rows(seq) - 1, 1);
            return {f_stack, global};
        }
        Var b_stack = run_direction(t, seq, bwd_, h_bwd_, true);
        Var local = t.concat_cols({f_stack, b_stack});
        Var global = t.concat_cols({t.slice_rows(f_stack, t.rows(seq) - 1, 1),
                                    t.slice_rows(b_stack, 0, 1)});
        return {local, global};
    }

    std::vector<Param*> params() {
        std::vector<Param*> out{&fwd_.w, &fwd_.b};
        if (bi_) {
            out.push_back(&bwd_.w);
            out.push_back(&bwd_.b);
        }
        return out;
    }

    int hidden() const { return d_h_; }
    int input_dim() const { return in_dim_; }

private:
    struct Direction {
        Param w; // (in + h) x 4h
        Param b; // 1 x 4h
    };

    static Direction make_dir(const std::string& name, int in_dim, int h, Rng& rng) {
        Direction d;
        d.w = Param(name + ".w", init_matrix(rng, in_dim + h, 4 * h, 1.0 / std::sqrt(double(in_dim + h))));
        Mat bias = Mat::Zero(1, 4 * h);
        bias.block(0, h, 1, h).setOnes(); // forget gate starts open
        d.b = Param(name + ".b", bias);
        return d;
    }

    // Returns the T x h stack of hidden states indexed by original position.
    static Var run_direction(Tape& t, Var seq, Direction& dir, int h, bool reverse) {
        Eigen::Index T = t.rows(seq);
        Var w = t.use(dir.w);
        Var b = t.use(dir.b);
        Var hidden = t.zeros(1, h);
        Var cell = t.zeros(1, h);
        std::vector<Var> rows(static_cast<std::size_t>(T));
        for (Eigen::Index step = 0; step < T; ++step) {
            Eigen::Index pos = reverse ? T - 1 - step : step;
            Var x = t.slice_rows(seq, pos, 1);
            Var pre = t.add_rowvec(t.matmul(t.concat_cols({x, hidden}), w), b);
            Var gi = t.sigmoid(t.slice_cols(pre, 0, h));
            Var gf = t.sigmoid(t.slice_cols(pre, h, h));
            Var gc = t.tanh(t.slice_cols(pre, 2 * h, h));
            Var go = t.sigmoid(t.slice_cols(pre, 3 * h, h));
            cell = t.add(t.hadamard(gf, cell), t.hadamard(gi, gc));
            hidden = t.hadamard(go, t.tanh(cell));
            rows[static_cast<std::size_t>(pos)] = hidden;
        }
        return t.concat_rows(rows);
    }

    Direction fwd_, bwd_;
    int in_dim_ = 0, d_h_ = 0, h_fwd_ = 0, h_bwd_ = 0;
    bool bi_ = false;
};

// Per-clip affine embedding (the mask-mode pipeline's video front end).
class LinearEmbed {
public:
    LinearEmbed() = default;
    LinearEmbed(const std::string& name, int in_dim, int out_dim, Rng& rng)
        : layer_(name, in_dim, out_dim, rng) {}

    Var embed(Tape& t, Var clips) {
        if (t.rows(clips) < 1) throw DegenerateInputError("LinearEmbed: empty input");
        return layer_(t, clips);
    }

    std::vector<Param*> params() { return layer_.params(); }
    Affine& affine() { return layer_; }

private:
    Affine layer_;
};

} // namespace groundqa
