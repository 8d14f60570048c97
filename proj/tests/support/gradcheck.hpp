#pragma once

// Central finite-difference gradient checking. Each test builds a closure
// that reruns its forward pass from the current parameter values; this header
// perturbs one scalar at a time and compares the quotient against the
// analytic gradient left behind by a backward() sweep.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "groundqa/core/tape.hpp"

namespace gqtest {

using groundqa::Mat;
using groundqa::Param;

// Relative error with an absolute floor: differences below `atol` count as
// zero (they are finite-difference noise), everything else is measured
// against the larger magnitude.
inline double rel_err(double analytic, double numeric, double atol = 1e-6) {
    double diff = std::abs(analytic - numeric);
    if (diff <= atol) return 0.0;
    return diff / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

// Worst relative error between `analytic` and central differences of
// `forward` w.r.t. every entry of `x`. `forward` must depend on `x` by
// reference (it reruns the computation from scratch each call).
inline double fd_worst(const std::function<double()>& forward, Mat& x, const Mat& analytic,
                       double h = 1e-4, double atol = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            double keep = x(r, c);
            x(r, c) = keep + h;
            double up = forward();
            x(r, c) = keep - h;
            double dn = forward();
            x(r, c) = keep;
            double numeric = (up - dn) / (2.0 * h);
            worst = std::max(worst, rel_err(analytic(r, c), numeric, atol));
        }
    }
    return worst;
}

// Full check for a model fragment: `run(true)` executes forward + backward
// (accumulating into each param's grad), `run(false)` is forward only.
// Returns the worst relative error across every entry of every parameter.
inline double check_params(const std::function<double(bool)>& run, std::vector<Param*> params,
                           double h = 1e-4, double atol = 1e-6) {
    for (Param* p : params) p->zero_grad();
    run(true);
    double worst = 0.0;
    for (Param* p : params) {
        auto fwd = [&] { return run(false); };
        worst = std::max(worst, fd_worst(fwd, p->value, p->grad, h, atol));
    }
    return worst;
}

// Deterministically filled test matrix with entries in roughly [-1, 1],
// decorrelated across (rows, cols, tag).
inline Mat filled(Eigen::Index r, Eigen::Index c, unsigned tag) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) {
            double t = std::sin(0.7 * double(i + 1) + 1.3 * double(j + 1) + 2.1 * double(tag + 1));
            m(i, j) = 0.9 * t;
        }
    return m;
}

} // namespace gqtest
