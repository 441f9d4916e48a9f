#include <cmath>

#include <doctest.h>

#include "dgdata/errors.hpp"
#include "dgdata/nn.hpp"
#include "dgdata/tape.hpp"

using namespace dgdata;

TEST_CASE("linear identity and hand-computed case") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 2}, {1.0, 2.0}));
    Var w_id = tape.leaf(Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    Var b0 = tape.leaf(Tensor({2}));
    const Tensor& y = tape.value(linear(x, w_id, b0));
    CHECK(y(0, 0) == doctest::Approx(1.0));
    CHECK(y(0, 1) == doctest::Approx(2.0));

    Var w = tape.leaf(Tensor::from({2, 1}, {1.0, 1.0}));
    Var b = tape.leaf(Tensor::from({1}, {0.5}));
    const Tensor& y2 = tape.value(linear(x, w, b));
    CHECK(y2(0, 0) == doctest::Approx(3.5));
}

TEST_CASE("linear rejects shape mismatch") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 3}, {1, 2, 3}));
    Var w = tape.leaf(Tensor::from({2, 1}, {1, 1}));
    Var b = tape.leaf(Tensor({1}));
    CHECK_THROWS_AS(linear(x, w, b), DimensionError);
}

TEST_CASE("conv1d identity kernel, edge filter, length formula") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1, 4}, {1, 2, 3, 4}));
    Var k_id = tape.leaf(Tensor::from({1, 1, 1}, {1.0}));
    const Tensor& same = tape.value(conv1d(x, k_id, 1));
    for (int i = 0; i < 4; ++i) CHECK(same(0, 0, i) == doctest::Approx(i + 1.0));

    Var k_edge = tape.leaf(Tensor::from({1, 1, 2}, {1.0, -1.0}));
    const Tensor& d = tape.value(conv1d(x, k_edge, 1));
    REQUIRE(d.dim(2) == 3);
    for (int i = 0; i < 3; ++i) CHECK(d(0, 0, i) == doctest::Approx(-1.0));

    Var big = tape.leaf(Tensor({1, 1, 90}));
    Var k9 = tape.leaf(Tensor({1, 1, 9}));
    CHECK(tape.value(conv1d(big, k9, 1)).dim(2) == 82);

    Var k_long = tape.leaf(Tensor({1, 1, 5}));
    Var short_x = tape.leaf(Tensor({1, 1, 4}));
    CHECK_THROWS_AS(conv1d(short_x, k_long, 1), DimensionError);
}

TEST_CASE("conv1d output length matches brute-force sliding for random configs") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        int len = 2 + rng.uniform_int(120);
        int k = 1 + rng.uniform_int(len);
        int stride = 1 + rng.uniform_int(4);
        int count = 0;
        for (int start = 0; start + k <= len; start += stride) ++count;
        Tape tape;
        Var x = tape.leaf(Tensor({1, 1, len}));
        Var kk = tape.leaf(Tensor({1, 1, k}));
        CHECK(tape.value(conv1d(x, kk, stride)).dim(2) == count);
    }
}

TEST_CASE("batchnorm1d normalizes, guards zero variance, eval consistency") {
    SUBCASE("constant batch maps to zero") {
        Tape tape;
        Var x = tape.leaf(Tensor::from({3, 1}, {5.0, 5.0, 5.0}));
        Var gamma = tape.leaf(Tensor({1}, 1.0));
        Var beta = tape.leaf(Tensor({1}));
        Tensor rm({1}), rv({1}, 1.0);
        const Tensor& y = tape.value(batchnorm1d(x, gamma, beta, rm, rv, true));
        for (int i = 0; i < 3; ++i) CHECK(y(i, 0) == doctest::Approx(0.0));
    }
    SUBCASE("two-point batch normalizes to +-1") {
        Tape tape;
        Var x = tape.leaf(Tensor::from({2, 1}, {0.0, 2.0}));
        Var gamma = tape.leaf(Tensor({1}, 1.0));
        Var beta = tape.leaf(Tensor({1}));
        Tensor rm({1}), rv({1}, 1.0);
        const Tensor& y = tape.value(batchnorm1d(x, gamma, beta, rm, rv, true));
        CHECK(y(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(y(1, 0) == doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("eval with running stats equal to batch stats reproduces train output") {
        Tensor x = Tensor::from({2, 1}, {0.0, 2.0});
        Tensor rm({1}), rv({1}, 1.0);
        Tape t1;
        Var g1 = t1.leaf(Tensor({1}, 1.0)), b1 = t1.leaf(Tensor({1}));
        Tensor train_out = t1.value(batchnorm1d(t1.leaf(x), g1, b1, rm, rv, true));
        // batch mean 1, biased variance 1
        Tensor rm2 = Tensor::from({1}, {1.0}), rv2 = Tensor::from({1}, {1.0});
        Tape t2;
        Var g2 = t2.leaf(Tensor({1}, 1.0)), b2 = t2.leaf(Tensor({1}));
        Tensor eval_out = t2.value(batchnorm1d(t2.leaf(x), g2, b2, rm2, rv2, false));
        for (int i = 0; i < 2; ++i) CHECK(eval_out(i, 0) == doctest::Approx(train_out(i, 0)));
    }
    SUBCASE("train mode rejects batch of one") {
        Tape tape;
        Var x = tape.leaf(Tensor({1, 2}));
        Var gamma = tape.leaf(Tensor({2}, 1.0));
        Var beta = tape.leaf(Tensor({2}));
        Tensor rm({2}), rv({2}, 1.0);
        CHECK_THROWS_AS(batchnorm1d(x, gamma, beta, rm, rv, true), ConfigError);
    }
}

TEST_CASE("relu clamps negatives") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 3}, {-1.0, 0.0, 2.0}));
    const Tensor& y = tape.value(relu(x));
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == 0.0);
    CHECK(y(0, 2) == 2.0);

    Var neg = tape.leaf(Tensor::from({1, 3}, {-3.0, -0.5, -10.0}));
    for (double v : tape.value(relu(neg)).data) CHECK(v == 0.0);
}

TEST_CASE("maxpool1d picks window maxima and validates width") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1, 4}, {1, 3, 2, 0}));
    const Tensor& y = tape.value(maxpool1d(x, 2, 2));
    REQUIRE(y.dim(2) == 2);
    CHECK(y(0, 0, 0) == 3.0);
    CHECK(y(0, 0, 1) == 2.0);

    Var flat = tape.leaf(Tensor({1, 1, 6}, 4.2));
    for (double v : tape.value(maxpool1d(flat, 2, 2)).data) CHECK(v == 4.2);

    Var l82 = tape.leaf(Tensor({1, 1, 82}));
    CHECK(tape.value(maxpool1d(l82, 2, 2)).dim(2) == 41);

    Var tiny = tape.leaf(Tensor({1, 1, 3}));
    CHECK_THROWS_AS(maxpool1d(tiny, 4, 1), DimensionError);
}

TEST_CASE("sigmoid is stable at extremes") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 3}, {0.0, 40.0, -40.0}));
    const Tensor& y = tape.value(sigmoid(x));
    CHECK(y(0, 0) == doctest::Approx(0.5));
    CHECK(std::abs(y(0, 1) - 1.0) < 1e-12);
    CHECK(y(0, 2) < 1e-12);
}

TEST_CASE("softmax cross entropy uniform, saturated, bad labels") {
    Tape tape;
    Var uniform = tape.leaf(Tensor({3, 4}, 0.7));
    double loss = tape.value(softmax_cross_entropy(uniform, {0, 1, 3})).data[0];
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor conf({1, 3});
    conf(0, 1) = 100.0;
    Var confident = tape.leaf(conf);
    CHECK(tape.value(softmax_cross_entropy(confident, {1})).data[0] == doctest::Approx(0.0).epsilon(1e-9));

    Var bad = tape.leaf(Tensor({2, 3}));
    CHECK_THROWS_AS(softmax_cross_entropy(bad, {0, 3}), LabelError);
    CHECK_THROWS_AS(softmax_cross_entropy(bad, {-1, -1}), StateError);
}

TEST_CASE("softmax cross entropy of uniform logits equals ln C for C in 2..100") {
    for (int c = 2; c <= 100; ++c) {
        Tape tape;
        Var logits = tape.leaf(Tensor({2, c}, -1.3));
        double loss = tape.value(softmax_cross_entropy(logits, {0, c - 1})).data[0];
        CHECK(loss == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-10));
    }
}

TEST_CASE("mse basics") {
    Tape tape;
    Var a = tape.leaf(Tensor::from({1, 2}, {0.3, -0.9}));
    CHECK(tape.value(mse(a, a)).data[0] == 0.0);

    Var zeros = tape.leaf(Tensor({1, 2}));
    Var ones = tape.leaf(Tensor({1, 2}, 1.0));
    CHECK(tape.value(mse(zeros, ones)).data[0] == doctest::Approx(1.0));

    Var wrong = tape.leaf(Tensor({1, 3}));
    CHECK_THROWS_AS(mse(a, wrong), DimensionError);
}

TEST_CASE("gaussian kl against closed form and positivity grid") {
    Tape tape;
    Var matched = tape.leaf(Tensor({2, 3})); // logvar 0 -> sigma^2 = 1
    CHECK(tape.value(gaussian_kl_to_var(matched, 1.0)).data[0] == doctest::Approx(0.0));

    Var lv = tape.leaf(Tensor({1, 1}, std::log(2.0)));
    double expect = 0.5 * (2.0 - 1.0 - std::log(2.0));
    CHECK(tape.value(gaussian_kl_to_var(lv, 1.0)).data[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.15342640972).epsilon(1e-9));

    CHECK_THROWS_AS(gaussian_kl_to_var(lv, 0.0), ConfigError);

    // zero iff variance matches the requested one, positive elsewhere
    for (double s2 = 0.25; s2 <= 4.0; s2 += 0.25) {
        for (double vt = 0.25; vt <= 4.0; vt += 0.25) {
            Tape t;
            Var v = t.leaf(Tensor({1, 1}, std::log(s2)));
            double kl = t.value(gaussian_kl_to_var(v, vt)).data[0];
            if (std::abs(s2 - vt) < 1e-12) {
                CHECK(kl == doctest::Approx(0.0).epsilon(1e-12));
            } else {
                CHECK(kl > 0.0);
            }
        }
    }
}

TEST_CASE("reparam sample determinism and degenerate variance") {
    Tensor mean_t = Tensor::from({1, 4}, {1.0, -2.0, 0.5, 3.0});
    {
        Tape tape;
        Rng rng(11);
        Var mean = tape.leaf(mean_t);
        Var logvar = tape.leaf(Tensor({1, 4}, -50.0));
        const Tensor& z = tape.value(reparam_sample(mean, logvar, rng));
        for (int i = 0; i < 4; ++i) CHECK(z(0, i) == doctest::Approx(mean_t(0, i)).epsilon(1e-9));
    }
    {
        Tape t1, t2;
        Rng r1(99), r2(99);
        Var m1 = t1.leaf(mean_t), l1 = t1.leaf(Tensor({1, 4}, 0.3));
        Var m2 = t2.leaf(mean_t), l2 = t2.leaf(Tensor({1, 4}, 0.3));
        Tensor z1 = t1.value(reparam_sample(m1, l1, r1));
        Tensor z2 = t2.value(reparam_sample(m2, l2, r2));
        for (size_t i = 0; i < z1.data.size(); ++i) CHECK(z1.data[i] == z2.data[i]);
    }
}

TEST_CASE("reparam sample empirical moments over 1e5 draws") {
    const int n = 100000;
    Rng rng(1234);
    double mu = 0.7, lv = std::log(1.7); // sigma^2 = 1.7
    Tape tape;
    Var mean = tape.leaf(Tensor({n, 1}, mu));
    Var logvar = tape.leaf(Tensor({n, 1}, lv));
    const Tensor& z = tape.value(reparam_sample(mean, logvar, rng));
    double s = 0.0, sq = 0.0;
    for (double v : z.data) {
        s += v;
        sq += v * v;
    }
    double emp_mean = s / n;
    double emp_var = sq / n - emp_mean * emp_mean;
    CHECK(std::abs(emp_mean - mu) < 0.01);
    CHECK(std::abs(emp_var - 1.7) / 1.7 < 0.02);
}

TEST_CASE("grad_reverse forward is bit-identical, backward scales by -lambda") {
    Tape tape;
    Tensor in = Tensor::from({1, 3}, {0.123456789, -9.87, 3.0});
    Var x = tape.leaf(in, true);
    Var y = grad_reverse(x, 1.0);
    for (size_t i = 0; i < in.data.size(); ++i) CHECK(tape.value(y).data[i] == in.data[i]);

    // upstream grad 2, lambda 1 -> propagated -2
    Tape t2;
    Var x2 = t2.leaf(Tensor::from({1, 1}, {5.0}), true);
    Var loss2 = scale(grad_reverse(x2, 1.0), 2.0);
    t2.backward(loss2);
    CHECK(t2.grad(x2).data[0] == -2.0);

    // lambda 0 kills the gradient
    Tape t3;
    Var x3 = t3.leaf(Tensor::from({1, 1}, {5.0}), true);
    Var loss3 = scale(grad_reverse(x3, 0.0), 2.0);
    t3.backward(loss3);
    CHECK(t3.grad(x3).data[0] == 0.0);

    CHECK_THROWS_AS(grad_reverse(x, -0.5), ConfigError);
}

TEST_CASE("adam hand-checked first step and invariants") {
    AdamConfig cfg;
    cfg.lr = 1e-3;
    cfg.beta1 = 0.2;
    cfg.beta2 = 0.999;
    cfg.weight_decay = 0.0;

    Parameter p("p", Tensor::from({1}, {0.4}));
    p.grad.data[0] = 1.0;
    adam_step(p, cfg);
    // bias-corrected first step moves by -lr * g / (|g| + eps)
    CHECK(p.value.data[0] == doctest::Approx(0.4 - 1e-3).epsilon(1e-7));
    CHECK(p.step == 1);

    Parameter q("q", Tensor::from({3}, {1.0, -2.0, 0.5}));
    adam_step(q, cfg); // zero grad, zero decay -> unchanged
    CHECK(q.value.data[0] == 1.0);
    CHECK(q.value.data[1] == -2.0);
    CHECK(q.value.data[2] == 0.5);

    AdamConfig defaults;
    CHECK(defaults.weight_decay == doctest::Approx(0.0005));
    CHECK(defaults.beta1 == doctest::Approx(0.2));
    defaults.validate();
}

TEST_CASE("backward reuse, determinism, detached error") {
    auto run = [](Tensor& grad_out) {
        Tape tape;
        Parameter w("w", Tensor::from({2, 2}, {0.3, -0.2, 0.8, 0.1}));
        Var x = tape.leaf(Tensor::from({1, 2}, {1.0, 2.0}));
        Var b = tape.leaf(Tensor({2}));
        Var y = relu(linear(x, w.use(tape), b));
        Var loss = mse(y, tape.leaf(Tensor({1, 2}, 1.0)));
        tape.backward(loss);
        grad_out = w.grad;
    };
    Tensor g1, g2;
    run(g1);
    run(g2);
    REQUIRE(g1.data.size() == g2.data.size());
    for (size_t i = 0; i < g1.data.size(); ++i) CHECK(g1.data[i] == g2.data[i]);

    Tape tape;
    Var detached = tape.leaf(Tensor::scalar(3.0), false);
    CHECK_THROWS_AS(tape.backward(detached), StateError);

    // constant loss -> zero gradients
    Tape t2;
    Parameter w("w", Tensor::from({1, 1}, {2.0}));
    Var wx = w.use(t2);
    Var loss = mse(scale(wx, 0.0), t2.leaf(Tensor({1, 1})));
    t2.backward(loss);
    CHECK(w.grad.data[0] == 0.0);
}

TEST_CASE("ops reject non-finite results") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1}, {1e308}));
    Var y = tape.leaf(Tensor::from({1, 1}, {1e308}));
    CHECK_THROWS_AS(add(x, y), NumericalError);
}
