#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "groundqa/core/errors.hpp"

namespace groundqa {

using Mat = Eigen::MatrixXd;

// A named trainable tensor. Lives outside any tape; tapes bind to it by
// pointer and accumulate into `grad`, so one parameter set can serve many
// short-lived tapes (one per instance) within a batch.
struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string n, Mat v)
        : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
};

class Tape;

// Lightweight handle to a node on a tape. Only meaningful together with the
// tape that produced it.
struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

// Reverse-mode autodiff tape over Eigen double matrices. Records a forward
// computation as a sequence of nodes, then replays registered backward
// closures in reverse order. Row-vector convention throughout: a single
// embedding is 1 x d, a sequence of T embeddings is T x d.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    // ---- leaves ----

    // Untracked constant.
    Var constant(Mat m) {
        Node n;
        n.owned = std::move(m);
        n.needs_grad = false;
        return push(std::move(n));
    }

    Var zeros(Eigen::Index r, Eigen::Index c) { return constant(Mat::Zero(r, c)); }
    Var ones(Eigen::Index r, Eigen::Index c) { return constant(Mat::Ones(r, c)); }

    // Binds a parameter. The node reads p.value in place and flushes its
    // gradient into p.grad when backward() completes.
    Var use(Param& p) {
        Node n;
        n.external = &p.value;
        n.sink = &p.grad;
        n.needs_grad = true;
        return push(std::move(n));
    }

    // Tracked leaf without an external sink; its gradient stays readable on
    // the tape. Used where a module wants gradients w.r.t. an activation.
    Var leaf(Mat m) {
        Node n;
        n.owned = std::move(m);
        n.needs_grad = true;
        return push(std::move(n));
    }

    // ---- accessors ----

    const Mat& val(Var v) const { return value_of(check(v)); }
    Eigen::Index rows(Var v) const { return val(v).rows(); }
    Eigen::Index cols(Var v) const { return val(v).cols(); }

    double scalar(Var v) const {
        const Mat& m = val(v);
        if (m.rows() != 1 || m.cols() != 1)
            throw ShapeError("scalar: node is " + dims(m) + ", expected 1x1");
        return m(0, 0);
    }

    // Gradient received by a node during backward(); zero matrix if none.
    Mat grad_of(Var v) const {
        const Node& n = nodes_[check(v)];
        if (!n.has_grad) return Mat::Zero(value_of(v.i).rows(), value_of(v.i).cols());
        return n.grad;
    }

    // Adds a contribution to a node's gradient. Public so custom operators
    // can route gradients; no-op for untracked nodes.
    void accum(Var v, const Mat& g) { accum_idx(check(v), g); }

    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise / arithmetic ----

    Var add(Var a, Var b) {
        same_shape("add", a, b);
        Var y = make(val(a) + val(b), {a, b});
        if (tracked(y)) set_back(y, [this, a, b, y] {
            accum_idx(a.i, nodes_[y.i].grad);
            accum_idx(b.i, nodes_[y.i].grad);
        });
        return y;
    }

    Var sub(Var a, Var b) {
        same_shape("sub", a, b);
        Var y = make(val(a) - val(b), {a, b});
        if (tracked(y)) set_back(y, [this, a, b, y] {
            accum_idx(a.i, nodes_[y.i].grad);
            accum_idx(b.i, -nodes_[y.i].grad);
        });
        return y;
    }

    Var hadamard(Var a, Var b) {
        same_shape("hadamard", a, b);
        Var y = make(val(a).cwiseProduct(val(b)), {a, b});
        if (tracked(y)) set_back(y, [this, a, b, y] {
            accum_idx(a.i, nodes_[y.i].grad.cwiseProduct(val(b)));
            accum_idx(b.i, nodes_[y.i].grad.cwiseProduct(val(a)));
        });
        return y;
    }

    Var matmul(Var a, Var b) {
        if (cols(a) != rows(b))
            throw ShapeError("matmul: " + dims(val(a)) + " * " + dims(val(b)));
        Var y = make(val(a) * val(b), {a, b});
        if (tracked(y)) set_back(y, [this, a, b, y] {
            const Mat& g = nodes_[y.i].grad;
            if (nodes_[a.i].needs_grad) grad_ref(a.i).noalias() += g * val(b).transpose();
            if (nodes_[b.i].needs_grad) grad_ref(b.i).noalias() += val(a).transpose() * g;
        });
        return y;
    }

    Var scale(Var a, double c) {
        Var y = make(val(a) * c, {a});
        if (tracked(y)) set_back(y, [this, a, y, c] {
            accum_idx(a.i, nodes_[y.i].grad * c);
        });
        return y;
    }

    Var neg(Var a) { return scale(a, -1.0); }

    Var shift(Var a, double c) {
        Var y = make((val(a).array() + c).matrix(), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            accum_idx(a.i, nodes_[y.i].grad);
        });
        return y;
    }

    Var transpose(Var a) {
        Var y = make(val(a).transpose(), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            accum_idx(a.i, nodes_[y.i].grad.transpose());
        });
        return y;
    }

    // ---- nonlinearities ----

    Var sigmoid(Var a) {
        Mat v = ((-val(a).array()).exp() + 1.0).inverse().matrix();
        Var y = make(std::move(v), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            const Mat& out = value_of(y.i);
            accum_idx(a.i, nodes_[y.i].grad.cwiseProduct(
                              out.cwiseProduct((1.0 - out.array()).matrix())));
        });
        return y;
    }

    Var tanh(Var a) {
        Var y = make(val(a).array().tanh().matrix(), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            const Mat& out = value_of(y.i);
            accum_idx(a.i, nodes_[y.i].grad.cwiseProduct(
                              (1.0 - out.array().square()).matrix()));
        });
        return y;
    }

    Var relu(Var a) {
        Var y = make(val(a).cwiseMax(0.0), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            Mat mask = (val(a).array() > 0.0).cast<double>().matrix();
            accum_idx(a.i, nodes_[y.i].grad.cwiseProduct(mask));
        });
        return y;
    }

    // log(max(a, eps)); zero slope inside the clamped region.
    Var log_clamped(Var a, double eps = 1e-12) {
        Var y = make(val(a).cwiseMax(eps).array().log().matrix(), {a});
        if (tracked(y)) set_back(y, [this, a, y, eps] {
            Mat d = (val(a).array().max(eps).inverse() *
                     (val(a).array() > eps).cast<double>())
                        .matrix();
            accum_idx(a.i, nodes_[y.i].grad.cwiseProduct(d));
        });
        return y;
    }

    // Elementwise reciprocal; the caller guarantees entries are bounded away
    // from zero.
    Var recip(Var a) {
        Var y = make(val(a).array().inverse().matrix(), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            const Mat& out = value_of(y.i);
            accum_idx(a.i, (-nodes_[y.i].grad.array() * out.array().square()).matrix());
        });
        return y;
    }

    Var clamp_min(Var a, double c) {
        Var y = make(val(a).cwiseMax(c), {a});
        if (tracked(y)) set_back(y, [this, a, y, c] {
            Mat mask = (val(a).array() > c).cast<double>().matrix();
            accum_idx(a.i, nodes_[y.i].grad.cwiseProduct(mask));
        });
        return y;
    }

    // ---- softmax family (rowwise, numerically stable) ----

    Var softmax_rows(Var a) {
        Mat v = val(a);
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            auto e = (v.row(r).array() - v.row(r).maxCoeff()).exp().eval();
            v.row(r) = (e / e.sum()).matrix();
        }
        Var y = make(std::move(v), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            const Mat& out = value_of(y.i);
            const Mat& g = nodes_[y.i].grad;
            Mat d(out.rows(), out.cols());
            for (Eigen::Index r = 0; r < out.rows(); ++r) {
                double s = (g.row(r).array() * out.row(r).array()).sum();
                d.row(r) = (out.row(r).array() * (g.row(r).array() - s)).matrix();
            }
            accum_idx(a.i, d);
        });
        return y;
    }

    Var log_softmax_rows(Var a) {
        Mat v = val(a);
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            auto t = (v.row(r).array() - v.row(r).maxCoeff()).eval();
            double lse = std::log(t.exp().sum());
            v.row(r) = (t - lse).matrix();
        }
        Var y = make(std::move(v), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            const Mat& out = value_of(y.i);
            const Mat& g = nodes_[y.i].grad;
            Mat d(out.rows(), out.cols());
            for (Eigen::Index r = 0; r < out.rows(); ++r) {
                double gsum = g.row(r).sum();
                d.row(r) = (g.row(r).array() - out.row(r).array().exp() * gsum).matrix();
            }
            accum_idx(a.i, d);
        });
        return y;
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        Var y = make(Mat::Constant(1, 1, val(a).sum()), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            accum_idx(a.i, Mat::Constant(rows(a), cols(a), nodes_[y.i].grad(0, 0)));
        });
        return y;
    }

    // n x m -> n x 1, summing across columns.
    Var row_sum(Var a) {
        Var y = make(val(a).rowwise().sum(), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            accum_idx(a.i, nodes_[y.i].grad * Mat::Ones(1, cols(a)));
        });
        return y;
    }

    // n x m -> 1 x m, summing across rows.
    Var col_sum(Var a) {
        Var y = make(val(a).colwise().sum(), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            accum_idx(a.i, Mat::Ones(rows(a), 1) * nodes_[y.i].grad);
        });
        return y;
    }

    Var mean_all(Var a) {
        return scale(sum_all(a), 1.0 / double(rows(a) * cols(a)));
    }

    Var dot(Var a, Var b) {
        same_shape("dot", a, b);
        Var y = make(Mat::Constant(1, 1, val(a).cwiseProduct(val(b)).sum()), {a, b});
        if (tracked(y)) set_back(y, [this, a, b, y] {
            double g = nodes_[y.i].grad(0, 0);
            accum_idx(a.i, g * val(b));
            accum_idx(b.i, g * val(a));
        });
        return y;
    }

    Var get(Var a, Eigen::Index r, Eigen::Index c) {
        if (r < 0 || r >= rows(a) || c < 0 || c >= cols(a))
            throw ShapeError("get: index out of range");
        Var y = make(Mat::Constant(1, 1, val(a)(r, c)), {a});
        if (tracked(y)) set_back(y, [this, a, y, r, c] {
            Mat d = Mat::Zero(rows(a), cols(a));
            d(r, c) = nodes_[y.i].grad(0, 0);
            accum_idx(a.i, d);
        });
        return y;
    }

    // n x m -> n x 1 rowwise maximum; gradient flows to each row's argmax.
    Var row_max(Var a) {
        const Mat& v = val(a);
        Mat out(v.rows(), 1);
        std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.rows()));
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            Eigen::Index c;
            out(r, 0) = v.row(r).maxCoeff(&c);
            arg[static_cast<std::size_t>(r)] = c;
        }
        Var y = make(std::move(out), {a});
        if (tracked(y)) set_back(y, [this, a, y, arg] {
            Mat d = Mat::Zero(rows(a), cols(a));
            for (Eigen::Index r = 0; r < d.rows(); ++r)
                d(r, arg[static_cast<std::size_t>(r)]) = nodes_[y.i].grad(r, 0);
            accum_idx(a.i, d);
        });
        return y;
    }

    // ---- structural ops ----

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw DegenerateInputError("concat_rows: no parts");
        Eigen::Index c = cols(parts[0]), total = 0;
        for (Var p : parts) {
            if (cols(p) != c) throw ShapeError("concat_rows: column mismatch");
            total += rows(p);
        }
        Mat v(total, c);
        Eigen::Index at = 0;
        for (Var p : parts) {
            v.middleRows(at, rows(p)) = val(p);
            at += rows(p);
        }
        Var y = make(std::move(v), parts);
        if (tracked(y)) set_back(y, [this, parts, y] {
            Eigen::Index at = 0;
            for (Var p : parts) {
                accum_idx(p.i, nodes_[y.i].grad.middleRows(at, rows(p)));
                at += rows(p);
            }
        });
        return y;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw DegenerateInputError("concat_cols: no parts");
        Eigen::Index r = rows(parts[0]), total = 0;
        for (Var p : parts) {
            if (rows(p) != r) throw ShapeError("concat_cols: row mismatch");
            total += cols(p);
        }
        Mat v(r, total);
        Eigen::Index at = 0;
        for (Var p : parts) {
            v.middleCols(at, cols(p)) = val(p);
            at += cols(p);
        }
        Var y = make(std::move(v), parts);
        if (tracked(y)) set_back(y, [this, parts, y] {
            Eigen::Index at = 0;
            for (Var p : parts) {
                accum_idx(p.i, nodes_[y.i].grad.middleCols(at, cols(p)));
                at += cols(p);
            }
        });
        return y;
    }

    Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
        if (r0 < 0 || n < 1 || r0 + n > rows(a))
            throw ShapeError("slice_rows: range out of bounds");
        Var y = make(val(a).middleRows(r0, n), {a});
        if (tracked(y)) set_back(y, [this, a, y, r0, n] {
            Mat d = Mat::Zero(rows(a), cols(a));
            d.middleRows(r0, n) = nodes_[y.i].grad;
            accum_idx(a.i, d);
        });
        return y;
    }

    Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
        if (c0 < 0 || n < 1 || c0 + n > cols(a))
            throw ShapeError("slice_cols: range out of bounds");
        Var y = make(val(a).middleCols(c0, n), {a});
        if (tracked(y)) set_back(y, [this, a, y, c0, n] {
            Mat d = Mat::Zero(rows(a), cols(a));
            d.middleCols(c0, n) = nodes_[y.i].grad;
            accum_idx(a.i, d);
        });
        return y;
    }

    // Gathers rows by index; duplicate indices accumulate on backward.
    Var select_rows(Var a, std::vector<Eigen::Index> idx) {
        for (Eigen::Index k : idx)
            if (k < 0 || k >= rows(a)) throw ShapeError("select_rows: index out of range");
        Mat v(static_cast<Eigen::Index>(idx.size()), cols(a));
        for (std::size_t r = 0; r < idx.size(); ++r)
            v.row(static_cast<Eigen::Index>(r)) = val(a).row(idx[r]);
        Var y = make(std::move(v), {a});
        if (tracked(y)) set_back(y, [this, a, y, idx = std::move(idx)] {
            Mat d = Mat::Zero(rows(a), cols(a));
            for (std::size_t r = 0; r < idx.size(); ++r)
                d.row(idx[r]) += nodes_[y.i].grad.row(static_cast<Eigen::Index>(r));
            accum_idx(a.i, d);
        });
        return y;
    }

    // Multiplies row r of `a` by w(r, 0).
    Var scale_rows(Var a, Var w) {
        if (cols(w) != 1 || rows(w) != rows(a))
            throw ShapeError("scale_rows: weight must be " + std::to_string(rows(a)) + "x1");
        Mat v = (val(a).array().colwise() * val(w).col(0).array()).matrix();
        Var y = make(std::move(v), {a, w});
        if (tracked(y)) set_back(y, [this, a, w, y] {
            const Mat& g = nodes_[y.i].grad;
            if (nodes_[a.i].needs_grad)
                accum_idx(a.i, (g.array().colwise() * val(w).col(0).array()).matrix());
            if (nodes_[w.i].needs_grad) {
                Mat dw(rows(w), 1);
                for (Eigen::Index r = 0; r < dw.rows(); ++r)
                    dw(r, 0) = g.row(r).dot(val(a).row(r));
                accum_idx(w.i, dw);
            }
        });
        return y;
    }

    // 1 x m -> n x m by repetition.
    Var tile_rows(Var v, Eigen::Index n) {
        if (rows(v) != 1) throw ShapeError("tile_rows: input must be a row vector");
        Var y = make(val(v).replicate(n, 1), {v});
        if (tracked(y)) set_back(y, [this, v, y] {
            accum_idx(v.i, nodes_[y.i].grad.colwise().sum());
        });
        return y;
    }

    // n x 1 -> n x m by repetition.
    Var tile_cols(Var v, Eigen::Index m) {
        if (cols(v) != 1) throw ShapeError("tile_cols: input must be a column vector");
        Var y = make(val(v).replicate(1, m), {v});
        if (tracked(y)) set_back(y, [this, v, y] {
            accum_idx(v.i, nodes_[y.i].grad.rowwise().sum());
        });
        return y;
    }

    // Adds a 1 x m bias row to every row of an n x m matrix.
    Var add_rowvec(Var a, Var b) {
        if (rows(b) != 1 || cols(b) != cols(a))
            throw ShapeError("add_rowvec: bias must be 1x" + std::to_string(cols(a)));
        Var y = make(val(a).rowwise() + val(b).row(0), {a, b});
        if (tracked(y)) set_back(y, [this, a, b, y] {
            accum_idx(a.i, nodes_[y.i].grad);
            accum_idx(b.i, nodes_[y.i].grad.colwise().sum());
        });
        return y;
    }

    Var flatten_rm(Var a) {
        const Mat& v = val(a);
        Mat out(1, v.rows() * v.cols());
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            out.block(0, r * v.cols(), 1, v.cols()) = v.row(r);
        Var y = make(std::move(out), {a});
        if (tracked(y)) set_back(y, [this, a, y] {
            const Mat& g = nodes_[y.i].grad;
            Mat d(rows(a), cols(a));
            for (Eigen::Index r = 0; r < d.rows(); ++r)
                d.row(r) = g.block(0, r * d.cols(), 1, d.cols());
            accum_idx(a.i, d);
        });
        return y;
    }

    Var reshape_rm(Var a, Eigen::Index r, Eigen::Index c) {
        if (rows(a) * cols(a) != r * c) throw ShapeError("reshape_rm: element count mismatch");
        const Mat& v = val(a);
        Mat out(r, c);
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < v.rows(); ++i)
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                out(k / c, k % c) = v(i, j);
                ++k;
            }
        Var y = make(std::move(out), {a});
        if (tracked(y)) set_back(y, [this, a, y, c] {
            const Mat& g = nodes_[y.i].grad;
            Mat d(rows(a), cols(a));
            Eigen::Index k = 0;
            for (Eigen::Index i = 0; i < d.rows(); ++i)
                for (Eigen::Index j = 0; j < d.cols(); ++j) {
                    d(i, j) = g(k / c, k % c);
                    ++k;
                }
            accum_idx(a.i, d);
        });
        return y;
    }

    // Forward takes the given hard value; backward passes gradients straight
    // through to `soft` as if the op were the identity on it.
    Var straight_through(Mat hard, Var soft) {
        if (hard.rows() != rows(soft) || hard.cols() != cols(soft))
            throw ShapeError("straight_through: hard/soft shape mismatch");
        Var y = make(std::move(hard), {soft});
        if (tracked(y)) set_back(y, [this, soft, y] {
            accum_idx(soft.i, nodes_[y.i].grad);
        });
        return y;
    }

    // Value copy with the gradient path severed.
    Var stop_grad(Var a) { return constant(val(a)); }

    // Escape hatch for operators whose backward pass is not a composition of
    // tape primitives (e.g. Monte Carlo gradient estimators). The closure
    // receives the tape and the output node; it reads grad_of(out) and calls
    // accum() on whichever inputs it chooses.
    Var custom(Mat value, const std::vector<Var>& parents,
               std::function<void(Tape&, Var)> back) {
        Var y = make(std::move(value), parents);
        if (tracked(y)) set_back(y, [this, y, back = std::move(back)] { back(*this, y); });
        return y;
    }

    // ---- backward ----

    // Seeds d(root)/d(root) = 1, sweeps the tape in reverse, then flushes
    // param gradients into their sinks. One-shot per tape.
    void backward(Var root) {
        if (done_) throw StateError("backward: tape already consumed");
        done_ = true;
        const Mat& rv = val(root);
        if (rv.rows() != 1 || rv.cols() != 1)
            throw ShapeError("backward: root must be 1x1, got " + dims(rv));
        if (!std::isfinite(rv(0, 0)))
            throw NumericError("backward: root value is not finite");
        if (!nodes_[check(root)].needs_grad) return;
        accum_idx(root.i, Mat::Ones(1, 1));
        for (int i = root.i; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.has_grad && n.back) n.back();
        }
        for (Node& n : nodes_)
            if (n.sink && n.has_grad) *n.sink += n.grad;
    }

private:
    struct Node {
        Mat owned;
        const Mat* external = nullptr;
        Mat grad;
        Mat* sink = nullptr;
        bool needs_grad = false;
        bool has_grad = false;
        std::function<void()> back;
    };

    // deque keeps node references stable as the tape grows.
    std::deque<Node> nodes_;
    bool done_ = false;

    int check(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.i) >= nodes_.size())
            throw StateError("tape: invalid node handle");
        return v.i;
    }

    const Mat& value_of(int i) const {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        return n.external ? *n.external : n.owned;
    }

    static std::string dims(const Mat& m) {
        return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    }

    void same_shape(const char* op, Var a, Var b) const {
        if (rows(a) != rows(b) || cols(a) != cols(b))
            throw ShapeError(std::string(op) + ": " + dims(val(a)) + " vs " + dims(val(b)));
    }

    Var push(Node&& n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var make(Mat value, const std::vector<Var>& parents) {
        Node n;
        n.owned = std::move(value);
        for (Var p : parents)
            if (nodes_[static_cast<std::size_t>(check(p))].needs_grad) {
                n.needs_grad = true;
                break;
            }
        return push(std::move(n));
    }

    bool tracked(Var v) const { return nodes_[static_cast<std::size_t>(v.i)].needs_grad; }

    void set_back(Var v, std::function<void()> f) {
        nodes_[static_cast<std::size_t>(v.i)].back = std::move(f);
    }

    Mat& grad_ref(int i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.has_grad) {
            n.grad = Mat::Zero(value_of(i).rows(), value_of(i).cols());
            n.has_grad = true;
        }
        return n.grad;
    }

    void accum_idx(int i, const Mat& g) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.needs_grad) return;
        grad_ref(i) += g;
    }
};

} // namespace groundqa
