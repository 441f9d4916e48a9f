#include <cmath>

#include <doctest.h>

#include "dgdata/nn.hpp"
#include "dgdata/tape.hpp"
#include "support/gradcheck.hpp"

using namespace dgdata;
using testsupport::avoid_kinks;
using testsupport::finite_difference_check;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

} // namespace

TEST_CASE("linear gradients match finite differences") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        Parameter x("x", random_tensor({3, 4}, rng));
        Parameter w("w", random_tensor({4, 2}, rng));
        Parameter b("b", random_tensor({2}, rng));
        Tensor target = random_tensor({3, 2}, rng);
        auto eval = [&](bool with_grad) {
            if (with_grad) {
                x.zero_grad();
                w.zero_grad();
                b.zero_grad();
            }
            Tape tape;
            Var loss = mse(linear(x.use(tape), w.use(tape), b.use(tape)), tape.leaf(target));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        auto rep = finite_difference_check({&x, &w, &b}, eval);
        CHECK_MESSAGE(rep.ok, "seed ", seed, " max_err ", rep.max_err);
        CHECK(rep.max_err <= 1e-4);
    }
}

TEST_CASE("conv1d gradients match finite differences") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 3 + 1);
        int stride = 1 + static_cast<int>(seed % 2);
        Parameter x("x", random_tensor({2, 3, 11}, rng));
        Parameter k("k", random_tensor({4, 3, 3}, rng));
        Tensor target = random_tensor({2, 4, (11 - 3) / stride + 1}, rng);
        auto eval = [&](bool with_grad) {
            if (with_grad) {
                x.zero_grad();
                k.zero_grad();
            }
            Tape tape;
            Var loss = mse(conv1d(x.use(tape), k.use(tape), stride), tape.leaf(target));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        auto rep = finite_difference_check({&x, &k}, eval);
        CHECK_MESSAGE(rep.ok, "seed ", seed, " max_err ", rep.max_err);
    }
}

TEST_CASE("bias_channel gradients match finite differences") {
    Rng rng(17);
    Parameter x("x", random_tensor({2, 3, 5}, rng));
    Parameter b("b", random_tensor({3}, rng));
    Tensor target = random_tensor({2, 3, 5}, rng);
    auto eval = [&](bool with_grad) {
        if (with_grad) {
            x.zero_grad();
            b.zero_grad();
        }
        Tape tape;
        Var loss = mse(bias_channel(x.use(tape), b.use(tape)), tape.leaf(target));
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };
    CHECK(finite_difference_check({&x, &b}, eval).ok);
}

TEST_CASE("relu gradient mask matches finite differences away from zero") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed + 100);
        Tensor init = random_tensor({3, 6}, rng);
        avoid_kinks(init);
        Parameter x("x", init);
        Tensor target = random_tensor({3, 6}, rng);
        auto eval = [&](bool with_grad) {
            if (with_grad) x.zero_grad();
            Tape tape;
            Var loss = mse(relu(x.use(tape)), tape.leaf(target));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        CHECK(finite_difference_check({&x}, eval).ok);
    }
}

TEST_CASE("maxpool1d routes gradient to first maximum") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed + 200);
        Tensor init = random_tensor({2, 2, 9}, rng, 2.0); // spread out, ties unlikely
        Parameter x("x", init);
        Tensor target = random_tensor({2, 2, 4}, rng);
        auto eval = [&](bool with_grad) {
            if (with_grad) x.zero_grad();
            Tape tape;
            Var loss = mse(maxpool1d(x.use(tape), 3, 2), tape.leaf(target));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        CHECK(finite_difference_check({&x}, eval).ok);
    }

    // explicit tie: both positions maximal, gradient goes to the first
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1, 2}, {1.5, 1.5}), true);
    Var pooled = maxpool1d(x, 2, 2);
    Var loss = scale(pooled, 3.0);
    tape.backward(loss);
    CHECK(tape.grad(x)(0, 0, 0) == 3.0);
    CHECK(tape.grad(x)(0, 0, 1) == 0.0);
}

TEST_CASE("sigmoid derivative matches finite differences") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed + 300);
        Parameter x("x", random_tensor({2, 5}, rng, 2.0));
        Tensor target = random_tensor({2, 5}, rng, 0.3);
        auto eval = [&](bool with_grad) {
            if (with_grad) x.zero_grad();
            Tape tape;
            Var loss = mse(sigmoid(x.use(tape)), tape.leaf(target));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        CHECK(finite_difference_check({&x}, eval).ok);
    }
}

TEST_CASE("softmax cross entropy gradient equals softmax minus one-hot") {
    Rng rng(5);
    Parameter logits("l", random_tensor({4, 5}, rng));
    std::vector<int> labels = {0, 3, 2, 4};
    auto eval = [&](bool with_grad) {
        if (with_grad) logits.zero_grad();
        Tape tape;
        Var loss = softmax_cross_entropy(logits.use(tape), labels);
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };
    CHECK(finite_difference_check({&logits}, eval).ok);

    // closed form check
    eval(true);
    Tape tape;
    Var lv = tape.leaf(logits.value);
    Tensor probs = softmax_rows(tape.value(lv));
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 5; ++j) {
            double expect = (probs(i, j) - (labels[static_cast<size_t>(i)] == j ? 1.0 : 0.0)) / 4.0;
            CHECK(logits.grad(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax cross entropy ignores masked rows in the gradient") {
    Rng rng(6);
    Parameter logits("l", random_tensor({3, 4}, rng));
    std::vector<int> labels = {1, -1, 2};
    auto eval = [&](bool with_grad) {
        if (with_grad) logits.zero_grad();
        Tape tape;
        Var loss = softmax_cross_entropy(logits.use(tape), labels);
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };
    CHECK(finite_difference_check({&logits}, eval).ok);
    eval(true);
    for (int j = 0; j < 4; ++j) CHECK(logits.grad(1, j) == 0.0);
}

TEST_CASE("mse gradient matches finite differences") {
    Rng rng(7);
    Parameter a("a", random_tensor({3, 3}, rng));
    Parameter b("b", random_tensor({3, 3}, rng));
    auto eval = [&](bool with_grad) {
        if (with_grad) {
            a.zero_grad();
            b.zero_grad();
        }
        Tape tape;
        Var loss = mse(a.use(tape), b.use(tape));
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };
    CHECK(finite_difference_check({&a, &b}, eval).ok);
}

TEST_CASE("gaussian kl gradient matches finite differences") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed + 400);
        Parameter logvar("lv", random_tensor({2, 4}, rng, 0.7));
        double var_target = 0.5 + rng.uniform() * 2.0;
        auto eval = [&](bool with_grad) {
            if (with_grad) logvar.zero_grad();
            Tape tape;
            Var loss = gaussian_kl_to_var(logvar.use(tape), var_target);
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        CHECK(finite_difference_check({&logvar}, eval).ok);
    }
}

TEST_CASE("reparam sample gradients flow to mean and logvar") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng init(seed + 500);
        Parameter mean("m", random_tensor({2, 3}, init));
        Parameter logvar("lv", random_tensor({2, 3}, init, 0.5));
        Tensor target = random_tensor({2, 3}, init);
        auto eval = [&](bool with_grad) {
            if (with_grad) {
                mean.zero_grad();
                logvar.zero_grad();
            }
            Rng draw(81 + seed); // same noise for every probe
            Tape tape;
            Var z = reparam_sample(mean.use(tape), logvar.use(tape), draw);
            Var loss = mse(z, tape.leaf(target));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        CHECK(finite_difference_check({&mean, &logvar}, eval).ok);
    }
}

TEST_CASE("batchnorm1d train-mode gradients match finite differences") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed + 600);
        bool rank3 = seed % 2 == 0;
        Parameter x("x", rank3 ? random_tensor({4, 2, 3}, rng) : random_tensor({5, 3}, rng));
        int ch = rank3 ? 2 : 3;
        Parameter gamma("g", random_tensor({ch}, rng, 0.5));
        for (double& v : gamma.value.data) v += 1.0;
        Parameter beta("b", random_tensor({ch}, rng, 0.3));
        Tensor target = Tensor(x.value.shape);
        for (double& v : target.data) v = rng.normal();
        auto eval = [&](bool with_grad) {
            if (with_grad) {
                x.zero_grad();
                gamma.zero_grad();
                beta.zero_grad();
            }
            Tensor rm({ch}), rv({ch}, 1.0); // fresh buffers so the probe has no side effects
            Tape tape;
            Var y = batchnorm1d(x.use(tape), gamma.use(tape), beta.use(tape), rm, rv, true);
            Var loss = mse(y, tape.leaf(target));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        auto rep = finite_difference_check({&x, &gamma, &beta}, eval);
        CHECK_MESSAGE(rep.ok, "seed ", seed, " max_err ", rep.max_err);
    }
}

TEST_CASE("composite stack over every op matches finite differences") {
    // conv -> bias -> bn -> relu -> pool -> flatten -> linear -> sigmoid head
    // plus kl + reparam; exercises the whole tape at once. The reversal op is
    // excluded: its backward is intentionally not the derivative of its
    // forward, so finite differences cannot apply (see the duality tests).
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed + 700);
        Parameter x("x", random_tensor({3, 2, 12}, rng));
        avoid_kinks(x.value, 0.02);
        Parameter k("k", random_tensor({3, 2, 3}, rng, 0.7));
        Parameter kb("kb", random_tensor({3}, rng, 0.2));
        Parameter gamma("g", Tensor({3}, 1.0));
        Parameter beta("b", random_tensor({3}, rng, 0.1));
        Parameter w("w", random_tensor({15, 4}, rng, 0.4));
        Parameter wb("wb", random_tensor({4}, rng, 0.1));
        Parameter w2("w2", random_tensor({4, 2}, rng, 0.6));
        Parameter wb2("wb2", random_tensor({2}, rng, 0.1));
        std::vector<int> labels = {0, 1, 0};
        auto eval = [&](bool with_grad) {
            if (with_grad) {
                for (Parameter* p : {&x, &k, &kb, &gamma, &beta, &w, &wb, &w2, &wb2}) {
                    p->zero_grad();
                }
            }
            Tensor rm({3}), rv({3}, 1.0);
            Rng draw(42);
            Tape tape;
            Var h = conv1d(x.use(tape), k.use(tape), 1);
            h = bias_channel(h, kb.use(tape));
            h = batchnorm1d(h, gamma.use(tape), beta.use(tape), rm, rv, true);
            h = relu(h);
            h = maxpool1d(h, 2, 2);
            Var f = flatten(h);
            Var mean = linear(f, w.use(tape), wb.use(tape));
            Var logvar = scale(mean, 0.1);
            Var z = reparam_sample(mean, logvar, draw);
            Var logits = linear(sigmoid(z), w2.use(tape), wb2.use(tape));
            Var loss = add(softmax_cross_entropy(logits, labels),
                           add(gaussian_kl_to_var(logvar, 1.3), mse(mean, tape.leaf(Tensor({3, 4})))));
            if (with_grad) tape.backward(loss);
            return tape.value(loss).data[0];
        };
        auto rep = finite_difference_check({&x, &k, &kb, &gamma, &beta, &w, &wb, &w2, &wb2}, eval);
        CHECK_MESSAGE(rep.ok, "seed ", seed, " max_err ", rep.max_err);
    }
}
