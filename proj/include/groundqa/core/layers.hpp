#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "groundqa/core/rng.hpp"
#include "groundqa/core/tape.hpp"

namespace groundqa {

inline Mat init_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
    return m;
}

// Affine map on row vectors: y = x W + b, applied rowwise to T x in inputs.
struct Affine {
    Param w;
    Param b;

    Affine() = default;
    Affine(const std::string& name, int in, int out, Rng& rng)
        : w(name + ".w", init_matrix(rng, in, out, 1.0 / std::sqrt(double(in)))),
          b(name + ".b", Mat::Zero(1, out)) {}

    Var operator()(Tape& t, Var x) { return t.add_rowvec(t.matmul(x, t.use(w)), t.use(b)); }

    std::vector<Param*> params() { return {&w, &b}; }
    int in_dim() const { return int(w.value.rows()); }
    int out_dim() const { return int(w.value.cols()); }
};

// Bias-free linear map on row vectors: y = x W.
struct Linear {
    Param w;

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng)
        : w(name + ".w", init_matrix(rng, in, out, 1.0 / std::sqrt(double(in)))) {}

    Var operator()(Tape& t, Var x) { return t.matmul(x, t.use(w)); }

    std::vector<Param*> params() { return {&w}; }
    int in_dim() const { return int(w.value.rows()); }
    int out_dim() const { return int(w.value.cols()); }
};

inline void collect(std::vector<Param*>& into, std::vector<Param*> more) {
    into.insert(into.end(), more.begin(), more.end());
}

} // namespace groundqa
