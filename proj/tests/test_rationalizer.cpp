#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "groundqa/objectives.hpp"
#include "groundqa/rationalizer.hpp"
#include "support/gradcheck.hpp"

using namespace groundqa;
using gqtest::check_params;
using gqtest::filled;

namespace {

Mat rowvec(std::initializer_list<double> vals) {
    Mat m(1, Eigen::Index(vals.size()));
    Eigen::Index j = 0;
    for (double v : vals) m(0, j++) = v;
    return m;
}

Mat gaussian_rows(Rng& rng, Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

} // namespace

TEST_CASE("hard top-k selection", "[rationalizer]") {
    Mat row = rowvec({3.0, 1.0, 2.0, 2.0});

    SECTION("indices ranked by value, ties to the lower index") {
        auto idx = topk_indices(row, 3);
        REQUIRE(idx == std::vector<Eigen::Index>{0, 2, 3});
        REQUIRE(topk_indices(row, 1) == std::vector<Eigen::Index>{0});
    }

    SECTION("mask sums to exactly K") {
        for (int k = 1; k <= 4; ++k) {
            Mat mask = hard_topk_mask(row, k);
            REQUIRE(mask.sum() == double(k));
            REQUIRE(mask.minCoeff() >= 0.0);
            REQUIRE(mask.maxCoeff() <= 1.0);
        }
        REQUIRE(hard_topk_mask(row, 2) == rowvec({1.0, 0.0, 1.0, 0.0}));
    }

    SECTION("bounds are enforced") {
        REQUIRE_THROWS_AS(topk_indices(row, 0), ConfigError);
        REQUIRE_THROWS_AS(topk_indices(row, 5), ConfigError);
    }
}

TEST_CASE("perturbed top-k values", "[rationalizer]") {
    SECTION("K = n selects everything exactly") {
        Tape t;
        Rng rng(70);
        Var scores = t.constant(rowvec({0.3, -1.0, 2.0}));
        Var mask = perturbed_topk(t, scores, 3, 0.5, 50, rng);
        REQUIRE(t.val(mask) == Mat::Ones(1, 3));
    }

    SECTION("vanishing noise recovers the hard mask") {
        Tape t;
        Rng rng(71);
        Var scores = t.constant(rowvec({3.0, 1.0, 2.0}));
        Var mask = perturbed_topk(t, scores, 2, 1e-6, 100, rng);
        REQUIRE(t.val(mask) == rowvec({1.0, 0.0, 1.0}));
    }

    SECTION("entries lie in [0,1] and the mean sums to K") {
        Tape t;
        Rng rng(72);
        Var scores = t.constant(rowvec({0.5, 0.4, 0.3, 0.2, 0.1, 0.0}));
        Var mask = perturbed_topk(t, scores, 3, 0.5, 500, rng);
        const Mat& m = t.val(mask);
        REQUIRE(m.minCoeff() >= 0.0);
        REQUIRE(m.maxCoeff() <= 1.0);
        REQUIRE(std::abs(m.sum() - 3.0) < 1e-12);
        REQUIRE(std::abs(m.sum() - 3.0) < 0.05);
    }

    SECTION("configuration errors") {
        Tape t;
        Rng rng(73);
        Var scores = t.constant(rowvec({1.0, 2.0}));
        REQUIRE_THROWS_AS(perturbed_topk(t, scores, 3, 0.5, 10, rng), ConfigError);
        REQUIRE_THROWS_AS(perturbed_topk(t, scores, 0, 0.5, 10, rng), ConfigError);
        REQUIRE_THROWS_AS(perturbed_topk(t, scores, 1, 0.0, 10, rng), ConfigError);
        REQUIRE_THROWS_AS(perturbed_topk(t, scores, 1, 0.5, 0, rng), ConfigError);
        REQUIRE_THROWS_AS(perturbed_topk_with_noise(t, scores, 1, 0.5, Mat(3, 3)), ShapeError);
    }
}

TEST_CASE("perturbed top-k gradient matches the Gaussian closed form", "[rationalizer][grad]") {
    // For n=2, K=1 the expected first mask entry is Phi((s0-s1)/(sigma*sqrt 2))
    // and its derivative w.r.t. s0 is the normal density at that point.
    const double sigma = 0.7;
    const double s0 = 0.3, s1 = -0.2;
    const double arg = (s0 - s1) / (sigma * std::sqrt(2.0));
    const double density = std::exp(-0.5 * arg * arg) / std::sqrt(2.0 * M_PI);
    const double want = density / (sigma * std::sqrt(2.0));

    Param scores("s", rowvec({s0, s1}));
    scores.zero_grad();
    Tape t;
    Rng rng(74);
    Var mask = perturbed_topk(t, t.use(scores), 1, sigma, 200000, rng);
    Var first = t.get(mask, 0, 0);
    REQUIRE(std::abs(t.scalar(first) - 0.5 * std::erfc(-arg / std::sqrt(2.0))) < 0.01);
    t.backward(first);
    REQUIRE(std::abs(scores.grad(0, 0) - want) < 0.02);
    REQUIRE(std::abs(scores.grad(0, 1) + want) < 0.02);
}

TEST_CASE("training selection agrees with hard top-k at small noise", "[rationalizer]") {
    Rng rng(75);
    const int vectors = 1000, n = 16, k = 5;
    int agree = 0;
    for (int v = 0; v < vectors; ++v) {
        Mat scores = gaussian_rows(rng, 1, n);
        Tape t;
        Var mask = perturbed_topk(t, t.constant(scores), k, 0.05, 300, rng);
        auto soft_top = topk_indices(t.val(mask), k);
        auto hard_top = topk_indices(scores, k);
        std::set<Eigen::Index> a(soft_top.begin(), soft_top.end());
        std::set<Eigen::Index> b(hard_top.begin(), hard_top.end());
        if (a == b) ++agree;
    }
    REQUIRE(double(agree) / vectors >= 0.99);
}

TEST_CASE("expected mask is monotone in each score", "[rationalizer]") {
    Rng rng(76);
    const int samples = 2000;
    const double mc_tol = 2.0 * 0.5 / std::sqrt(double(samples));
    for (int trial = 0; trial < 5; ++trial) {
        Mat base = gaussian_rows(rng, 1, 8);
        for (Eigen::Index i : {0, 3, 7}) {
            Tape t;
            Var m0 = perturbed_topk(t, t.constant(base), 3, 0.5, samples, rng);
            Mat bumped = base;
            bumped(0, i) += 0.25;
            Var m1 = perturbed_topk(t, t.constant(bumped), 3, 0.5, samples, rng);
            REQUIRE(t.val(m1)(0, i) >= t.val(m0)(0, i) - mc_tol);
        }
    }
}

TEST_CASE("selection from an interaction map", "[rationalizer]") {
    TopKConfig cfg;
    Rng rng(77);

    SECTION("hand-built 3x2 map matches brute-force enumeration") {
        Tape t;
        Mat tokens = filled(3, 4, 60);
        Mat z(3, 2);
        z << 0.9, 0.05, 0.02, 0.8, 0.6, 0.1;
        SelectionResult r = select_from_map(t, t.constant(tokens), t.constant(z), 3,
                                            SelectionMode::infer, cfg, rng);
        // Top-3 of flattened (.9,.05,.02,.8,.6,.1): slots 0,3,4 -> frames 0,1,2.
        REQUIRE(r.indices == std::vector<Eigen::Index>{0, 1, 2});
        REQUIRE(t.val(r.selected) == tokens);
        REQUIRE(t.val(r.weights) == Mat::Ones(1, 3));
    }

    SECTION("interactions concentrated on one frame dedup to a single token") {
        Tape t;
        Mat tokens = filled(3, 4, 61);
        Mat z(3, 2);
        z << 0.01, 0.02, 0.9, 0.8, 0.03, 0.04;
        SelectionResult r = select_from_map(t, t.constant(tokens), t.constant(z), 2,
                                            SelectionMode::infer, cfg, rng);
        REQUIRE(r.indices == std::vector<Eigen::Index>{1});
        REQUIRE(t.val(r.selected) == tokens.row(1));
        REQUIRE(t.val(r.weights) == rowvec({0.0, 1.0, 0.0}));
    }

    SECTION("brute force over random maps") {
        for (int trial = 0; trial < 20; ++trial) {
            Mat z = gaussian_rows(rng, 4, 3);
            Tape t;
            SelectionResult r = select_from_map(t, t.constant(filled(4, 2, 62)), t.constant(z),
                                                5, SelectionMode::infer, cfg, rng);

            Mat flat(1, 12);
            for (Eigen::Index i = 0; i < 4; ++i)
                for (Eigen::Index j = 0; j < 3; ++j) flat(0, i * 3 + j) = z(i, j);
            std::set<Eigen::Index> want;
            for (Eigen::Index f : topk_indices(flat, 5)) want.insert(f / 3);
            std::set<Eigen::Index> got(r.indices.begin(), r.indices.end());
            REQUIRE(got == want);
            REQUIRE(std::is_sorted(r.indices.begin(), r.indices.end()));
            REQUIRE(std::adjacent_find(r.indices.begin(), r.indices.end()) == r.indices.end());
            REQUIRE(r.indices.size() <= 5);
        }
    }

    SECTION("train mode gathers at full strength") {
        Tape t;
        Mat tokens = filled(3, 4, 63);
        Mat z(3, 2);
        z << 0.9, 0.05, 0.02, 0.8, 0.6, 0.1;
        SelectionResult r = select_from_map(t, t.constant(tokens), t.constant(z), 2,
                                            SelectionMode::train, cfg, rng);
        REQUIRE(r.indices == std::vector<Eigen::Index>{0, 1});
        REQUIRE(t.val(r.selected) == tokens.topRows(2));
        const Mat& w = t.val(r.weights);
        REQUIRE(w.minCoeff() >= 0.0);
        REQUIRE(w.maxCoeff() <= 1.0);
    }

    SECTION("K beyond the interaction count clamps") {
        Tape t;
        SelectionResult r = select_from_map(t, t.constant(filled(2, 4, 64)),
                                            t.constant(filled(2, 2, 65)), 50,
                                            SelectionMode::infer, cfg, rng);
        REQUIRE(r.indices == std::vector<Eigen::Index>{0, 1});
    }
}

TEST_CASE("temporal rationalization", "[rationalizer]") {
    RationalizerConfig cfg;
    cfg.d_h = 4;
    cfg.K_f = 3;
    Rng init(78);
    Rationalizer rat("rat", cfg, 5, init);
    Rng rng(79);

    SECTION("single question token reduces to per-frame scores") {
        Tape t;
        SelectionResult r = rat.temporal_rationalize(t, t.constant(filled(6, 4, 70)),
                                                     t.constant(filled(1, 4, 71)),
                                                     SelectionMode::infer, rng);
        REQUIRE(r.indices.size() == 3);
        REQUIRE(t.rows(r.selected) == 3);
    }

    SECTION("token count never exceeds K_f") {
        for (int tag = 0; tag < 5; ++tag) {
            Tape t;
            SelectionResult r = rat.temporal_rationalize(t, t.constant(filled(7, 4, 80 + tag)),
                                                         t.constant(filled(3, 4, 90 + tag)),
                                                         SelectionMode::infer, rng);
            REQUIRE(r.indices.size() >= 1);
            REQUIRE(r.indices.size() <= 3);
            REQUIRE(t.cols(r.selected) == 4);
        }
    }

    SECTION("inference is deterministic") {
        auto run = [&] {
            Tape t;
            SelectionResult r = rat.temporal_rationalize(t, t.constant(filled(5, 4, 72)),
                                                         t.constant(filled(2, 4, 73)),
                                                         SelectionMode::infer, rng);
            return Mat(t.val(r.selected));
        };
        REQUIRE(run() == run());
    }
}

TEST_CASE("spatial rationalization", "[rationalizer]") {
    RationalizerConfig cfg;
    cfg.d_h = 4;
    cfg.K_o = 5;
    Rng init(81);
    Rationalizer rat("rat", cfg, 5, init);
    Rng rng(82);
    Mat frame = filled(1, 4, 74);
    Mat question = filled(2, 4, 75);

    SECTION("a single object is always selected") {
        Tape t;
        Mat object = filled(1, 4, 76);
        SelectionResult r = rat.spatial_rationalize(t, t.constant(frame), t.constant(object),
                                                    t.constant(question), SelectionMode::infer,
                                                    rng);
        REQUIRE(r.indices == std::vector<Eigen::Index>{0});
        REQUIRE(t.rows(r.selected) == 1);
    }

    SECTION("five interactions over two columns span at least three objects") {
        Tape t;
        SelectionResult r = rat.spatial_rationalize(t, t.constant(frame),
                                                    t.constant(filled(5, 4, 77)),
                                                    t.constant(question), SelectionMode::infer,
                                                    rng);
        REQUIRE(r.indices.size() >= 3);
        REQUIRE(r.indices.size() <= 5);
    }

    SECTION("frames with different object sets adapt their counts") {
        Tape t;
        SelectionResult one = rat.spatial_rationalize(t, t.constant(frame),
                                                      t.constant(filled(1, 4, 78)),
                                                      t.constant(question),
                                                      SelectionMode::infer, rng);
        SelectionResult many = rat.spatial_rationalize(t, t.constant(frame),
                                                       t.constant(filled(5, 4, 79)),
                                                       t.constant(question),
                                                       SelectionMode::infer, rng);
        REQUIRE(one.indices.size() != many.indices.size());
    }

    SECTION("input contracts") {
        Tape t;
        REQUIRE_THROWS_AS(rat.spatial_rationalize(t, t.constant(filled(2, 4, 1)),
                                                  t.constant(filled(3, 4, 2)),
                                                  t.constant(question), SelectionMode::infer,
                                                  rng),
                          ShapeError);
        REQUIRE_THROWS_AS(rat.spatial_rationalize(t, t.constant(frame), t.constant(Mat(0, 4)),
                                                  t.constant(question), SelectionMode::infer,
                                                  rng),
                          DegenerateInputError);
    }
}

TEST_CASE("multi-granularity reasoning", "[rationalizer]") {
    RationalizerConfig cfg;
    cfg.d_h = 3;
    Rng init(83);
    Rationalizer rat("rat", cfg, 5, init);

    SECTION("zero selected objects pass the frame through") {
        Tape t;
        Mat frames = filled(2, 3, 85);
        std::vector<Var> objects = {Var{}, t.constant(filled(2, 3, 86))};
        Mat enhanced = t.val(rat.object_enhance(t, t.constant(frames), objects));
        REQUIRE(enhanced.row(0) == frames.row(0));
        REQUIRE(enhanced.row(1) != frames.row(1));
    }

    SECTION("identity projections with the object equal to the frame double it") {
        rat.enhance_layer().wq().w.value.setIdentity();
        rat.enhance_layer().wk().w.value.setIdentity();
        rat.enhance_layer().wv().w.value.setIdentity();
        Tape t;
        Mat frame = filled(1, 3, 87);
        std::vector<Var> objects = {t.constant(frame)};
        Mat enhanced = t.val(rat.object_enhance(t, t.constant(frame), objects));
        REQUIRE((enhanced - 2.0 * frame).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("output stacks C frames and L question tokens") {
        Tape t;
        Mat frames = filled(3, 3, 88);
        std::vector<Var> objects = {t.constant(filled(2, 3, 89)), Var{},
                                    t.constant(filled(1, 3, 90))};
        Var m = rat.mgr(t, t.constant(frames), objects, t.constant(filled(4, 3, 91)));
        REQUIRE(t.rows(m) == 7);
        REQUIRE(t.cols(m) == 3);
        REQUIRE_THROWS_AS(rat.object_enhance(t, t.constant(frames), {Var{}}), ShapeError);
    }
}

TEST_CASE("answer decoding", "[rationalizer]") {
    RationalizerConfig cfg;
    cfg.d_h = 4;
    Rng init(84);
    Rationalizer rat("rat", cfg, 6, init);
    Mat memory = filled(5, 4, 92);

    SECTION("permuting candidates permutes logits identically") {
        Rng rng(85);
        for (int trial = 0; trial < 100; ++trial) {
            Mat queries = gaussian_rows(rng, 5, 4);
            std::vector<Eigen::Index> perm = {0, 1, 2, 3, 4};
            rng.shuffle(perm.begin(), perm.end());
            Mat permuted(5, 4);
            for (Eigen::Index i = 0; i < 5; ++i) permuted.row(i) = queries.row(perm[i]);

            Tape t;
            Mat base = t.val(rat.decode_mc(t, t.constant(queries), t.constant(memory)));
            Mat swapped = t.val(rat.decode_mc(t, t.constant(permuted), t.constant(memory)));
            for (Eigen::Index i = 0; i < 5; ++i)
                REQUIRE(std::abs(swapped(0, i) - base(0, perm[i])) < 1e-6);
        }
    }

    SECTION("single candidate yields one logit with softmax one") {
        Tape t;
        Var logits = rat.decode_mc(t, t.constant(filled(1, 4, 93)), t.constant(memory));
        REQUIRE(t.rows(logits) == 1);
        REQUIRE(t.cols(logits) == 1);
        REQUIRE(std::abs(t.val(t.softmax_rows(logits))(0, 0) - 1.0) < 1e-12);
    }

    SECTION("candidate summaries are token means") {
        Tape t;
        Mat c0 = filled(3, 4, 94), c1 = filled(2, 4, 95);
        Var summary = rat.summarize_candidates(t, {t.constant(c0), t.constant(c1)});
        REQUIRE((t.val(summary).row(0) - c0.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((t.val(summary).row(1) - c1.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("open-ended decoding hits the vocabulary and is deterministic") {
        auto run = [&] {
            Tape t;
            return Mat(t.val(rat.decode_oe(t, t.constant(memory))));
        };
        REQUIRE(run().cols() == 6);
        REQUIRE(run() == run());
    }

    SECTION("learnable query receives gradient") {
        auto run = [&](bool grad) {
            Tape t;
            Var logits = rat.decode_oe(t, t.constant(memory));
            Var loss = causal_loss(t, make_prediction(t, logits), 2);
            double v = t.scalar(loss);
            if (grad) t.backward(loss);
            return v;
        };
        REQUIRE(check_params(run, {&rat.oe_query()}) < 1e-4);
        REQUIRE(rat.oe_query().grad.cwiseAbs().sum() > 0.0);
    }
}

TEST_CASE("rationalizer pipeline gradients and mode parity", "[rationalizer][grad]") {
    RationalizerConfig cfg;
    cfg.d_h = 4;
    cfg.K_f = 3;
    cfg.K_o = 2;
    cfg.topk.samples = 20;
    Rng init(86);
    Rationalizer rat("rat", cfg, 5, init);

    Param frames("frames", filled(4, 4, 96));
    Param question("question", filled(2, 4, 97));
    Param objects("objects", filled(3, 4, 98));
    Param cands("cands", filled(5, 4, 99));

    auto forward = [&](Tape& t, SelectionMode mode, Rng& rng) {
        SelectionResult temporal =
            rat.temporal_rationalize(t, t.use(frames), t.use(question), mode, rng);
        std::vector<Var> per_frame;
        std::vector<SelectionResult> spatial;
        for (std::size_t i = 0; i < temporal.indices.size(); ++i) {
            Var f = t.slice_rows(temporal.selected, Eigen::Index(i), 1);
            SelectionResult r =
                rat.spatial_rationalize(t, f, t.use(objects), t.use(question), mode, rng);
            per_frame.push_back(r.selected);
            spatial.push_back(r);
        }
        Var memory = rat.mgr(t, temporal.selected, per_frame, t.use(question));
        Var logits = rat.decode_mc(t, t.use(cands), memory);
        return causal_loss(t, make_prediction(t, logits), 1);
    };

    SECTION("inference-mode gradients agree with finite differences") {
        auto run = [&](bool grad) {
            Tape t;
            Rng rng(87);
            Var loss = forward(t, SelectionMode::infer, rng);
            double v = t.scalar(loss);
            if (grad) t.backward(loss);
            return v;
        };
        std::vector<Param*> all = {&frames, &question, &objects, &cands};
        for (Param* p : rat.params()) all.push_back(p);
        REQUIRE(check_params(run, all) < 1e-3);
    }

    SECTION("training forward value matches inference when selections agree") {
        Tape ti;
        Rng ri(88);
        double infer_loss = ti.scalar(forward(ti, SelectionMode::infer, ri));
        Tape tt;
        Rng rt(88);
        double train_loss = tt.scalar(forward(tt, SelectionMode::train, rt));
        REQUIRE(std::abs(infer_loss - train_loss) < 1e-12);
    }

    SECTION("training mode adds selection-path gradients") {
        auto grad_sum = [&](SelectionMode mode) {
            for (Param* p : rat.params()) p->zero_grad();
            Tape t;
            Rng rng(89);
            Var loss = forward(t, mode, rng);
            t.backward(loss);
            double total = 0.0;
            for (Param* p : rat.frame_cross_layer().params())
                total += p->grad.cwiseAbs().sum();
            return total;
        };
        double infer_g = grad_sum(SelectionMode::infer);
        double train_g = grad_sum(SelectionMode::train);
        REQUIRE(train_g > 0.0);
        REQUIRE(std::abs(train_g - infer_g) > 1e-12);
    }
}

TEST_CASE("selection dump entry", "[rationalizer]") {
    SelectionResult temporal;
    temporal.indices = {1, 4};
    SelectionResult s0, s1;
    s0.indices = {0, 2};
    s1.indices = {3};
    nlohmann::json entry = selection_dump_entry("vid:000007", temporal, {s0, s1});
    REQUIRE(entry["id"] == "vid:000007");
    REQUIRE(entry["frame_indices"] == std::vector<long>({1, 4}));
    REQUIRE(entry["objects_per_frame_indices"][0] == std::vector<long>({0, 2}));
    REQUIRE(entry["objects_per_frame_indices"][1] == std::vector<long>({3}));
}
