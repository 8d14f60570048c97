#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "groundqa/encoders.hpp"
#include "support/gradcheck.hpp"

using namespace groundqa;

namespace {

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void zero_params(std::vector<Param*> ps) {
    for (Param* p : ps) p->value.setZero();
}

} // namespace

TEST_CASE("sequence encoder shape contracts") {
    Rng rng(7);
    SECTION("bidirectional local and global widths") {
        SequenceEncoder enc("enc", 3, 5, true, rng);
        Tape t;
        SeqEncoding out = enc.encode(t, t.constant(gqtest::filled(4, 3, 1)));
        REQUIRE(t.rows(out.local) == 4);
        REQUIRE(t.cols(out.local) == 5);
        REQUIRE(t.rows(out.global) == 1);
        REQUIRE(t.cols(out.global) == 5);
    }
    SECTION("unidirectional") {
        SequenceEncoder enc("enc", 2, 4, false, rng);
        Tape t;
        SeqEncoding out = enc.encode(t, t.constant(gqtest::filled(6, 2, 2)));
        REQUIRE(t.rows(out.local) == 6);
        REQUIRE(t.cols(out.local) == 4);
    }
    SECTION("length one collapses local and global") {
        SequenceEncoder enc("enc", 3, 4, true, rng);
        Tape t;
        SeqEncoding out = enc.encode(t, t.constant(gqtest::filled(1, 3, 3)));
        REQUIRE((t.val(out.local) - t.val(out.global)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("empty sequence is degenerate") {
        SequenceEncoder enc("enc", 3, 4, true, rng);
        Tape t;
        REQUIRE_THROWS_AS(enc.encode(t, t.constant(Mat::Zero(0, 3))),
                          DegenerateInputError);
    }
    SECTION("width mismatch is a shape error") {
        SequenceEncoder enc("enc", 3, 4, true, rng);
        Tape t;
        REQUIRE_THROWS_AS(enc.encode(t, t.constant(Mat::Zero(2, 5))), ShapeError);
    }
}

TEST_CASE("zero parameters and zero input give zero hidden states") {
    Rng rng(7);
    SequenceEncoder enc("enc", 2, 4, true, rng);
    zero_params(enc.params());
    Tape t;
    SeqEncoding out = enc.encode(t, t.constant(Mat::Zero(3, 2)));
    REQUIRE(t.val(out.local).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(t.val(out.global).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("recurrence matches a hand-rolled trace") {
    Rng rng(7);
    SECTION("uniform half weights") {
        SequenceEncoder enc("enc", 1, 1, false, rng);
        for (Param* p : enc.params()) p->value.setConstant(0.5);

        double h = 0.0, c = 0.0;
        double xs[2] = {1.0, -1.0};
        double expect[2];
        for (int step = 0; step < 2; ++step) {
            double pre = 0.5 * xs[step] + 0.5 * h + 0.5;
            double gi = sigma(pre), gf = sigma(pre), gc = std::tanh(pre), go = sigma(pre);
            c = gf * c + gi * gc;
            h = go * std::tanh(c);
            expect[step] = h;
        }

        Tape t;
        Mat input(2, 1);
        input << 1.0, -1.0;
        SeqEncoding out = enc.encode(t, t.constant(input));
        REQUIRE(t.val(out.local)(0, 0) == Catch::Approx(expect[0]).margin(1e-6));
        REQUIRE(t.val(out.local)(1, 0) == Catch::Approx(expect[1]).margin(1e-6));
        REQUIRE(t.val(out.global)(0, 0) == Catch::Approx(expect[1]).margin(1e-6));
    }
    SECTION("distinct per-gate weights pin the gate order") {
        SequenceEncoder enc("enc", 1, 1, false, rng);
        std::vector<Param*> ps = enc.params();
        ps[0]->value << 0.1, 0.2, 0.3, 0.4,
                        0.5, 0.6, 0.7, 0.8; // rows: [x; h], cols: [i f c o]
        ps[1]->value << 0.05, 0.1, 0.15, 0.2;

        double h = 0.0, c = 0.0;
        double xs[3] = {1.0, -0.5, 0.25};
        for (double x : xs) {
            double gi = sigma(0.1 * x + 0.5 * h + 0.05);
            double gf = sigma(0.2 * x + 0.6 * h + 0.1);
            double gc = std::tanh(0.3 * x + 0.7 * h + 0.15);
            double go = sigma(0.4 * x + 0.8 * h + 0.2);
            c = gf * c + gi * gc;
            h = go * std::tanh(c);
        }

        Tape t;
        Mat input(3, 1);
        input << 1.0, -0.5, 0.25;
        SeqEncoding out = enc.encode(t, t.constant(input));
        REQUIRE(t.val(out.global)(0, 0) == Catch::Approx(h).margin(1e-6));
    }
}

TEST_CASE("unidirectional rows ignore future inputs, bidirectional rows see them") {
    Rng rng(9);
    Mat base = gqtest::filled(5, 3, 4);
    Mat bumped = base;
    bumped(3, 1) += 0.5;

    SECTION("unidirectional") {
        SequenceEncoder enc("enc", 3, 4, false, rng);
        Tape t1, t2;
        Mat a = t1.val(enc.encode(t1, t1.constant(base)).local);
        Mat b = t2.val(enc.encode(t2, t2.constant(bumped)).local);
        REQUIRE((a.topRows(3) - b.topRows(3)).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((a.row(3) - b.row(3)).cwiseAbs().maxCoeff() > 0.0);
    }
    SECTION("bidirectional") {
        SequenceEncoder enc("enc", 3, 4, true, rng);
        Tape t1, t2;
        Mat a = t1.val(enc.encode(t1, t1.constant(base)).local);
        Mat b = t2.val(enc.encode(t2, t2.constant(bumped)).local);
        REQUIRE((a.row(0) - b.row(0)).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("identical parameters and input give identical encodings") {
    Rng rng(11);
    SequenceEncoder enc("enc", 3, 6, true, rng);
    Mat input = gqtest::filled(4, 3, 5);
    Tape t1, t2;
    SeqEncoding a = enc.encode(t1, t1.constant(input));
    SeqEncoding b = enc.encode(t2, t2.constant(input));
    REQUIRE(t1.val(a.local) == t2.val(b.local));
    REQUIRE(t1.val(a.global) == t2.val(b.global));
}

TEST_CASE("encoder gradients match finite differences") {
    Rng rng(13);
    SequenceEncoder enc("enc", 3, 4, true, rng);
    Param input("input", gqtest::filled(3, 3, 6));

    auto run = [&](bool bw) {
        Tape t;
        SeqEncoding out = enc.encode(t, t.use(input));
        Var wl = t.constant(gqtest::filled(3, 4, 7));
        Var wg = t.constant(gqtest::filled(1, 4, 8));
        Var loss = t.add(t.sum_all(t.hadamard(out.local, wl)),
                         t.sum_all(t.hadamard(out.global, wg)));
        if (bw) t.backward(loss);
        return t.scalar(loss);
    };

    std::vector<Param*> ps = enc.params();
    ps.push_back(&input);
    REQUIRE(gqtest::check_params(run, ps) < 1e-4);
}

TEST_CASE("linear embedding behaves as an affine map") {
    Rng rng(15);
    SECTION("identity weights, zero bias") {
        LinearEmbed emb("emb", 3, 3, rng);
        emb.affine().w.value = Mat::Identity(3, 3);
        emb.affine().b.value.setZero();
        Mat x = gqtest::filled(4, 3, 9);
        Tape t;
        REQUIRE(t.val(emb.embed(t, t.constant(x))) == x);
    }
    SECTION("zero weights broadcast the bias") {
        LinearEmbed emb("emb", 3, 2, rng);
        emb.affine().w.value.setZero();
        emb.affine().b.value << 0.5, -0.25;
        Tape t;
        Mat out = t.val(emb.embed(t, t.constant(gqtest::filled(4, 3, 10))));
        for (int r = 0; r < 4; ++r) {
            REQUIRE(out(r, 0) == 0.5);
            REQUIRE(out(r, 1) == -0.25);
        }
    }
    SECTION("random case matches the explicit product") {
        LinearEmbed emb("emb", 3, 2, rng);
        Mat x = gqtest::filled(2, 3, 11);
        Tape t;
        Mat out = t.val(emb.embed(t, t.constant(x)));
        Mat expect = x * emb.affine().w.value;
        expect.rowwise() += emb.affine().b.value.row(0);
        REQUIRE((out - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("gradients") {
        LinearEmbed emb("emb", 3, 2, rng);
        Param input("input", gqtest::filled(4, 3, 12));
        auto run = [&](bool bw) {
            Tape t;
            Var y = emb.embed(t, t.use(input));
            Var w = t.constant(gqtest::filled(4, 2, 13));
            Var loss = t.sum_all(t.hadamard(y, w));
            if (bw) t.backward(loss);
            return t.scalar(loss);
        };
        std::vector<Param*> ps = emb.params();
        ps.push_back(&input);
        REQUIRE(gqtest::check_params(run, ps) < 1e-4);
    }
}
