#pragma once

// Shared answer predictor: a heterogeneous graph over scene and question
// nodes, graph propagation with residuals, attention pooling, low-rank
// bilinear fusion of the global factors, and the answer classifier. One
// parameter set serves every scene view it is asked to score.

#include <cmath>
#include <string>
#include <vector>

#include "groundqa/core/errors.hpp"
#include "groundqa/core/layers.hpp"
#include "groundqa/core/rng.hpp"
#include "groundqa/core/tape.hpp"
#include "groundqa/encoders.hpp"
#include "groundqa/objectives.hpp"

namespace groundqa {

struct GraphState {
    Var nodes;     // (N+L) x d_h
    Var adjacency; // (N+L) x (N+L), rows sum to 1
};

struct FusedRepresentation {
    Var s_local;
    Var s_global;
    Var s_final;
};

struct BackbonePrediction {
    PredictionDistribution pred;
    FusedRepresentation fused;
    GraphState graph;
};

// Low-rank bilinear pooling: bias-free projections to rank*d_h, elementwise
// product, chunk sum, output affine.
class FusionBlock {
  public:
    FusionBlock() = default;
    FusionBlock(const std::string& name, int d_h, int rank, Rng& rng)
        : d_h_(d_h), rank_(rank), proj_a_(name + ".a", d_h, rank * d_h, rng),
          proj_b_(name + ".b", d_h, rank * d_h, rng), out_(name + ".out", d_h, d_h, rng) {
        if (d_h < 1 || rank < 1) throw ConfigError("FusionBlock: d_h and rank must be positive");
    }

    Var operator()(Tape& t, Var a, Var b) {
        if (t.rows(a) != 1 || t.rows(b) != 1 || t.cols(a) != d_h_ || t.cols(b) != d_h_)
            throw ShapeError("FusionBlock: inputs must be 1 x d_h");
        Var prod = t.hadamard(proj_a_(t, a), proj_b_(t, b));
        Var chunks = t.reshape_rm(prod, rank_, d_h_);
        return out_(t, t.col_sum(chunks));
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, proj_a_.params());
        collect(out, proj_b_.params());
        collect(out, out_.params());
        return out;
    }

    Linear& proj_a() { return proj_a_; }
    Linear& proj_b() { return proj_b_; }
    Affine& out() { return out_; }

  private:
    int d_h_ = 0;
    int rank_ = 0;
    Linear proj_a_;
    Linear proj_b_;
    Affine out_;
};

class Backbone {
  public:
    Backbone() = default;
    Backbone(const std::string& name, int d_h, int num_answers, Rng& rng, int gcn_layers = 2,
             int fusion_rank = 4)
        : d_h_(d_h), num_answers_(num_answers), gcn_layers_(gcn_layers),
          scene_encoder_(name + ".scene", d_h, d_h, /*bidirectional=*/true, rng),
          mlp5_(name + ".adj_left", d_h, d_h, rng), mlp6_(name + ".adj_right", d_h, d_h, rng),
          score_(name + ".pool", d_h, 1, rng),
          fuse_global_(name + ".fuse_global", d_h, fusion_rank, rng),
          fuse_final_(name + ".fuse_final", d_h, fusion_rank, rng),
          classifier_(name + ".cls", d_h, num_answers, rng) {
        if (d_h < 2 || num_answers < 2 || gcn_layers < 0)
            throw ConfigError("Backbone: need d_h >= 2, num_answers >= 2, gcn_layers >= 0");
        gcn_.reserve(std::size_t(gcn_layers));
        for (int l = 0; l < gcn_layers; ++l)
            gcn_.emplace_back(name + ".gcn" + std::to_string(l), d_h, d_h, rng);
    }

    // Nodes are the stacked scene and question rows; the adjacency is the
    // product of two rectified projections, symmetrized and row-normalized
    // with uniform smoothing so zero rows fall back to a uniform graph.
    GraphState build_graph(Tape& t, Var scene_local, Var q_local) {
        if (t.cols(scene_local) != d_h_) throw ShapeError("build_graph: scene width mismatch");
        Var nodes = scene_local;
        if (t.rows(q_local) > 0) {
            if (t.cols(q_local) != d_h_) throw ShapeError("build_graph: question width mismatch");
            nodes = t.concat_rows({scene_local, q_local});
        }
        Var left = t.relu(mlp5_(t, nodes));
        Var right = t.relu(mlp6_(t, nodes));
        Var g = t.matmul(left, t.transpose(right));
        Var sym = t.scale(t.add(g, t.transpose(g)), 0.5);
        Var smoothed = t.shift(sym, 1e-12);
        Var adj = t.scale_rows(smoothed, t.recip(t.row_sum(smoothed)));
        return {nodes, adj};
    }

    Var gcn_propagate(Tape& t, const GraphState& state, int layers) {
        if (layers < 0 || layers > gcn_layers_)
            throw ConfigError("gcn_propagate: layer count outside constructed range");
        Var z = state.nodes;
        for (int l = 0; l < layers; ++l)
            z = t.add(t.relu(gcn_[std::size_t(l)](t, t.matmul(state.adjacency, z))), z);
        return z;
    }

    Var attention_pool(Tape& t, Var nodes) {
        Var weights = t.softmax_rows(t.transpose(score_(t, nodes)));
        return t.matmul(weights, nodes);
    }

    BackbonePrediction predict(Tape& t, Var scene_rows, const SeqEncoding& question) {
        SeqEncoding scene = scene_encoder_.encode(t, scene_rows);
        GraphState graph = build_graph(t, scene.local, question.local);
        Var z = gcn_propagate(t, graph, gcn_layers_);
        FusedRepresentation fused;
        fused.s_local = attention_pool(t, z);
        fused.s_global = fuse_global_(t, scene.global, question.global);
        fused.s_final = fuse_final_(t, fused.s_global, fused.s_local);
        Var logits = classifier_(t, fused.s_final);
        return {make_prediction(t, logits), fused, graph};
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out, scene_encoder_.params());
        collect(out, mlp5_.params());
        collect(out, mlp6_.params());
        for (Affine& a : gcn_) collect(out, a.params());
        collect(out, score_.params());
        collect(out, fuse_global_.params());
        collect(out, fuse_final_.params());
        collect(out, classifier_.params());
        return out;
    }

    int hidden() const { return d_h_; }
    int num_answers() const { return num_answers_; }
    int gcn_layers() const { return gcn_layers_; }
    SequenceEncoder& scene_encoder() { return scene_encoder_; }
    Affine& adj_left() { return mlp5_; }
    Affine& adj_right() { return mlp6_; }
    Affine& gcn_layer(int l) { return gcn_.at(std::size_t(l)); }
    Affine& pool_score() { return score_; }
    FusionBlock& fuse_global() { return fuse_global_; }
    FusionBlock& fuse_final() { return fuse_final_; }
    Affine& classifier() { return classifier_; }

  private:
    int d_h_ = 0;
    int num_answers_ = 0;
    int gcn_layers_ = 0;
    SequenceEncoder scene_encoder_;
    Affine mlp5_;
    Affine mlp6_;
    std::vector<Affine> gcn_;
    Affine score_;
    FusionBlock fuse_global_;
    FusionBlock fuse_final_;
    Affine classifier_;
};

} // namespace groundqa
