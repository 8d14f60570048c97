#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "groundqa/objectives.hpp"
#include "support/gradcheck.hpp"

using namespace groundqa;
using gqtest::check_params;
using gqtest::filled;

namespace {

PredictionDistribution from_probs(Tape& t, std::initializer_list<double> ps) {
    Mat p(1, Eigen::Index(ps.size()));
    Eigen::Index j = 0;
    for (double v : ps) p(0, j++) = v;
    return make_prediction_from_probs(t, t.constant(p));
}

} // namespace

TEST_CASE("prediction distribution contracts", "[objectives]") {
    Tape t;
    Mat logits(1, 4);
    logits << 0.3, -1.2, 2.0, 0.0;
    auto pred = make_prediction(t, t.constant(logits));
    const Mat& p = t.val(pred.probs);
    REQUIRE(p.rows() == 1);
    REQUIRE(p.cols() == 4);
    REQUIRE(p.minCoeff() > 0.0);
    REQUIRE(std::abs(p.sum() - 1.0) < 1e-12);
    const Mat& lp = t.val(pred.log_probs);
    for (Eigen::Index j = 0; j < 4; ++j)
        REQUIRE(std::abs(std::exp(lp(0, j)) - p(0, j)) < 1e-12);

    Mat col(3, 1);
    col.setZero();
    REQUIRE_THROWS_AS(make_prediction(t, t.constant(col)), ShapeError);
    Mat bad(1, 3);
    bad << 0.5, 0.2, 0.2;
    REQUIRE_THROWS_AS(make_prediction_from_probs(t, t.constant(bad)), NumericError);
}

TEST_CASE("causal loss matches negative log likelihood", "[objectives]") {
    Tape t;
    Mat logits(1, 4);
    logits << 0.1, 1.4, -0.7, 0.9;
    auto pred = make_prediction(t, t.constant(logits));
    for (int a = 0; a < 4; ++a) {
        Var l = causal_loss(t, pred, a);
        REQUIRE(std::abs(t.scalar(l) + t.val(pred.log_probs)(0, a)) < 1e-12);
        REQUIRE(t.scalar(l) > 0.0);
    }
    auto uniform = from_probs(t, {0.25, 0.25, 0.25, 0.25});
    REQUIRE(std::abs(t.scalar(causal_loss(t, uniform, 2)) - std::log(4.0)) < 1e-9);
    REQUIRE_THROWS_AS(causal_loss(t, pred, 4), ConfigError);
    REQUIRE_THROWS_AS(causal_loss(t, pred, -1), ConfigError);
}

TEST_CASE("environment loss oracle values", "[objectives]") {
    Tape t;
    auto onehot = from_probs(t, {1.0, 0.0, 0.0, 0.0});
    REQUIRE(std::abs(t.scalar(environment_loss(t, onehot)) - std::log(4.0)) < 1e-8);

    auto uniform = from_probs(t, {0.25, 0.25, 0.25, 0.25});
    REQUIRE(std::abs(t.scalar(environment_loss(t, uniform))) < 1e-8);

    auto tilted = from_probs(t, {0.4, 0.3, 0.2, 0.1});
    double expect = 0.0;
    for (double p : {0.4, 0.3, 0.2, 0.1}) expect += p * std::log(p / 0.25);
    REQUIRE(std::abs(t.scalar(environment_loss(t, tilted)) - expect) < 1e-10);
    REQUIRE(t.scalar(environment_loss(t, tilted)) > 0.0);
}

TEST_CASE("consistency loss is a KL divergence", "[objectives]") {
    Tape t;
    auto half = from_probs(t, {0.5, 0.5});
    auto skew = from_probs(t, {0.9, 0.1});
    double kl = t.scalar(consistency_loss(t, half, skew));
    double hand = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    REQUIRE(std::abs(kl - 0.5108) < 1e-4);
    REQUIRE(std::abs(kl - hand) < 1e-10);

    double reversed = t.scalar(consistency_loss(t, skew, half));
    REQUIRE(std::abs(reversed - kl) > 0.1);

    REQUIRE(std::abs(t.scalar(consistency_loss(t, skew, skew))) < 1e-12);

    auto near = from_probs(t, {0.9 + 1e-3, 0.1 - 1e-3});
    REQUIRE(t.scalar(consistency_loss(t, near, skew)) > 0.0);
}

TEST_CASE("aggregate objectives combine linearly", "[objectives]") {
    Tape t;
    Var lc = t.constant(Mat::Constant(1, 1, 1.0));
    Var le = t.constant(Mat::Constant(1, 1, 2.0));
    Var lv = t.constant(Mat::Constant(1, 1, 3.0));

    LossWeights w;
    REQUIRE(std::abs(t.scalar(igv_objective(t, lc, le, lv, w)) - 6.0) < 1e-12);

    w.igv_lambda1 = 0.0;
    w.igv_lambda2 = 0.0;
    REQUIRE(std::abs(t.scalar(igv_objective(t, lc, le, lv, w)) - 1.0) < 1e-12);

    w.igv_lambda1 = 0.5;
    w.igv_lambda2 = 2.0;
    REQUIRE(std::abs(t.scalar(igv_objective(t, lc, le, lv, w)) - 8.0) < 1e-12);

    LossWeights bad;
    bad.igv_lambda1 = -0.1;
    REQUIRE_THROWS_AS(igv_objective(t, lc, le, lv, bad), ConfigError);

    REQUIRE(std::abs(t.scalar(eigv_objective(t, lc, le, 0.75)) - 2.5) < 1e-12);
    REQUIRE(std::abs(t.scalar(eigv_objective(t, lc, le, 0.0)) - 1.0) < 1e-12);
    REQUIRE_THROWS_AS(eigv_objective(t, lc, le, -0.5), ConfigError);
}

TEST_CASE("soft cross-entropy generalizes the hard loss", "[objectives]") {
    Tape t;
    Mat logits(1, 4);
    logits << 0.2, -0.4, 1.1, 0.6;
    auto pred = make_prediction(t, t.constant(logits));

    Mat onehot = Mat::Zero(1, 4);
    onehot(0, 2) = 1.0;
    Var hard = causal_loss(t, pred, 2);
    Var soft = soft_cross_entropy(t, pred, t.constant(onehot));
    REQUIRE(std::abs(t.scalar(hard) - t.scalar(soft)) < 1e-12);

    Mat mix(1, 4);
    mix << 0.5, 0.0, 0.5, 0.0;
    double want = -0.5 * t.val(pred.log_probs)(0, 0) - 0.5 * t.val(pred.log_probs)(0, 2);
    REQUIRE(std::abs(t.scalar(soft_cross_entropy(t, pred, t.constant(mix))) - want) < 1e-12);

    // Minimized when the prediction equals the soft label.
    Mat match_logits(1, 2);
    match_logits << std::log(0.7), std::log(0.3);
    auto matched = make_prediction(t, t.constant(match_logits));
    Mat label(1, 2);
    label << 0.7, 0.3;
    double at_match = t.scalar(soft_cross_entropy(t, matched, t.constant(label)));
    for (double d : {-0.2, 0.2, 0.6}) {
        Mat off(1, 2);
        off << std::log(0.7) + d, std::log(0.3);
        auto pred_off = make_prediction(t, t.constant(off));
        REQUIRE(t.scalar(soft_cross_entropy(t, pred_off, t.constant(label))) > at_match);
    }

    Mat wide(1, 3);
    wide.setConstant(1.0 / 3.0);
    REQUIRE_THROWS_AS(soft_cross_entropy(t, pred, t.constant(wide)), ShapeError);
}

TEST_CASE("info_nce oracle cases", "[objectives]") {
    Tape t;
    Mat a(1, 3), pos(1, 3), neg(1, 3);
    a << 1.0, 0.0, 0.0;

    SECTION("symmetric pair gives ln 2") {
        pos << 0.5, 0.5, 0.0;
        neg << 0.5, -0.5, 0.0;
        Var l = info_nce(t, t.constant(a), t.constant(pos), {t.constant(neg)});
        REQUIRE(std::abs(t.scalar(l) - std::log(2.0)) < 1e-8);
    }

    SECTION("aligned positive, orthogonal negative") {
        pos << 1.0, 0.0, 0.0;
        neg << 0.0, 1.0, 0.0;
        Var l = info_nce(t, t.constant(a), t.constant(pos), {t.constant(neg)});
        double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
        REQUIRE(std::abs(t.scalar(l) - want) < 1e-10);
    }

    SECTION("loss decreases as the positive aligns") {
        neg << 0.0, 1.0, 0.0;
        double prev = 1e9;
        for (double s : {0.0, 0.5, 1.0, 2.0}) {
            Mat p(1, 3);
            p << s, 0.0, 0.0;
            double l = t.scalar(info_nce(t, t.constant(a), t.constant(p), {t.constant(neg)}));
            REQUIRE(l < prev);
            prev = l;
        }
    }

    SECTION("matches softmax cross-entropy at slot zero") {
        Mat anchor = filled(1, 5, 3);
        Mat positive = filled(1, 5, 4);
        std::vector<Mat> negs = {filled(1, 5, 5), filled(1, 5, 6), filled(1, 5, 7)};

        std::vector<Var> nv;
        for (const Mat& n : negs) nv.push_back(t.constant(n));
        double got = t.scalar(info_nce(t, t.constant(anchor), t.constant(positive), nv));

        // Independent oracle: stable log-sum-exp over the raw similarities.
        std::vector<double> sims = {(anchor * positive.transpose())(0, 0)};
        for (const Mat& n : negs) sims.push_back((anchor * n.transpose())(0, 0));
        double mx = *std::max_element(sims.begin(), sims.end());
        double z = 0.0;
        for (double s : sims) z += std::exp(s - mx);
        double want = -(sims[0] - mx - std::log(z));
        REQUIRE(std::abs(got - want) < 1e-10);
    }

    SECTION("no negatives is a configuration error") {
        pos << 1.0, 0.0, 0.0;
        REQUIRE_THROWS_AS(info_nce(t, t.constant(a), t.constant(pos), {}), ConfigError);
    }
}

TEST_CASE("loss gradients agree with finite differences", "[objectives][grad]") {
    SECTION("causal + environment + consistency through softmax") {
        Param logits_a("la", filled(1, 4, 11));
        Param logits_b("lb", filled(1, 4, 12));
        LossWeights w;
        w.igv_lambda1 = 0.7;
        w.igv_lambda2 = 1.3;
        auto run = [&](bool grad) {
            Tape t;
            auto pa = make_prediction(t, t.use(logits_a));
            auto pb = make_prediction(t, t.use(logits_b));
            Var loss = igv_objective(t, causal_loss(t, pa, 2), environment_loss(t, pb),
                                     consistency_loss(t, pb, pa), w);
            double v = t.scalar(loss);
            if (grad) t.backward(loss);
            return v;
        };
        double worst = check_params(run, {&logits_a, &logits_b});
        REQUIRE(worst < 1e-4);
    }

    SECTION("soft cross-entropy wrt both logits and labels") {
        Param logits("l", filled(1, 5, 21));
        Param raw_label("y", filled(1, 5, 22));
        auto run = [&](bool grad) {
            Tape t;
            auto pred = make_prediction(t, t.use(logits));
            Var label = t.softmax_rows(t.use(raw_label));
            Var loss = soft_cross_entropy(t, pred, label);
            double v = t.scalar(loss);
            if (grad) t.backward(loss);
            return v;
        };
        double worst = check_params(run, {&logits, &raw_label});
        REQUIRE(worst < 1e-4);
    }

    SECTION("info_nce wrt anchor, positive, and negatives") {
        Param anchor("a", filled(1, 6, 31));
        Param positive("p", filled(1, 6, 32));
        Param n0("n0", filled(1, 6, 33));
        Param n1("n1", filled(1, 6, 34));
        auto run = [&](bool grad) {
            Tape t;
            Var loss = info_nce(t, t.use(anchor), t.use(positive), {t.use(n0), t.use(n1)});
            double v = t.scalar(loss);
            if (grad) t.backward(loss);
            return v;
        };
        double worst = check_params(run, {&anchor, &positive, &n0, &n1});
        REQUIRE(worst < 1e-4);
    }
}
