#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "deft/autograd.hpp"
#include "gradcheck.hpp"

using namespace deft;
using deft_tests::gradcheck;
using deft_tests::random_tensor;

namespace {

// fixed weighted sum turns any output into a scalar with non-uniform pull
Tape<double>::Id weighted_loss(Tape<double>& tape, Tape<double>::Id out, const Tensor<double>& w) {
    return tape.sum_all(tape.mul(out, tape.constant(w)));
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(7);
    Parameter<double> a("a", random_tensor(rng, {3, 4}));
    Parameter<double> b("b", random_tensor(rng, {3, 4}));
    const Tensor<double> w = random_tensor(rng, {3, 4});

    SUBCASE("add") {
        auto res = gradcheck({&a, &b}, [&](Tape<double>& t) {
            return weighted_loss(t, t.add(t.parameter(a), t.parameter(b)), w);
        });
        CHECK(res.checked > 0);
        CHECK(res.max_rel_error < 1e-7);
    }
    SUBCASE("sub and mul") {
        auto res = gradcheck({&a, &b}, [&](Tape<double>& t) {
            return weighted_loss(t, t.mul(t.sub(t.parameter(a), t.parameter(b)), t.parameter(a)), w);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("scalar ops and abs") {
        auto res = gradcheck({&a}, [&](Tape<double>& t) {
            return t.mul_scalar(t.sum_all(t.abs(t.add_scalar(t.parameter(a), 0.3))), 2.5);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("relu") {
        auto res = gradcheck({&a}, [&](Tape<double>& t) {
            return weighted_loss(t, t.relu(t.parameter(a)), w);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
}

TEST_CASE("matmul and bias match finite differences") {
    Rng rng(11);
    Parameter<double> w("w", random_tensor(rng, {4, 5}));
    Parameter<double> b("b", random_tensor(rng, {5}));
    const Tensor<double> x = random_tensor(rng, {3, 4});
    const Tensor<double> pull = random_tensor(rng, {3, 5});
    auto res = gradcheck({&w, &b}, [&](Tape<double>& t) {
        return weighted_loss(t, t.add_row_bias(t.matmul(t.constant(x), t.parameter(w)), t.parameter(b)),
                             pull);
    });
    CHECK(res.checked == 25);
    CHECK(res.max_rel_error < 1e-7);
}

TEST_CASE("conv2d and conv2d_transpose match finite differences") {
    Rng rng(13);
    SUBCASE("conv2d") {
        Parameter<double> w("w", random_tensor(rng, {3, 2, 4, 4}, 0.5));
        Parameter<double> b("b", random_tensor(rng, {3}));
        Parameter<double> x("x", random_tensor(rng, {2, 2, 4, 4}));
        const Tensor<double> pull = random_tensor(rng, {2, 3, 2, 2});
        auto res = gradcheck({&w, &b, &x}, [&](Tape<double>& t) {
            return weighted_loss(t, t.conv2d(t.parameter(x), t.parameter(w), t.parameter(b)), pull);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("conv2d_transpose") {
        Parameter<double> w("w", random_tensor(rng, {3, 2, 4, 4}, 0.5));
        Parameter<double> b("b", random_tensor(rng, {2}));
        Parameter<double> x("x", random_tensor(rng, {2, 3, 2, 2}));
        const Tensor<double> pull = random_tensor(rng, {2, 2, 4, 4});
        auto res = gradcheck({&w, &b, &x}, [&](Tape<double>& t) {
            return weighted_loss(t, t.conv2d_transpose(t.parameter(x), t.parameter(w), t.parameter(b)),
                                 pull);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
    // <conv(x), y> == <x, convT(y)> with shared weights and zero bias
    Rng rng(17);
    const Tensor<double> w = random_tensor(rng, {3, 2, 4, 4});
    const Tensor<double> zero_f = Tensor<double>({3});
    const Tensor<double> zero_c = Tensor<double>({2});
    const Tensor<double> x = random_tensor(rng, {1, 2, 8, 8});
    const Tensor<double> y = random_tensor(rng, {1, 3, 4, 4});

    Tape<double> tape;
    auto cx = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(zero_f));
    auto ty = tape.conv2d_transpose(tape.constant(y), tape.constant(w), tape.constant(zero_c));
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) lhs += tape.val(cx).data[i] * y.data[i];
    for (std::size_t i = 0; i < x.data.size(); ++i) rhs += tape.val(ty).data[i] * x.data[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("reductions, slicing, concat, logsumexp match finite differences") {
    Rng rng(19);
    Parameter<double> a("a", random_tensor(rng, {4, 6}));
    Parameter<double> c("c", random_tensor(rng, {4, 3, 5}));
    const Tensor<double> pull4 = random_tensor(rng, {4});

    SUBCASE("row_sum / mean_all") {
        auto res = gradcheck({&a}, [&](Tape<double>& t) {
            return t.mean_all(t.row_sum(t.parameter(a)));
        });
        CHECK(res.max_rel_error < 1e-7);
    }
    SUBCASE("col_slice and col_concat") {
        auto res = gradcheck({&a}, [&](Tape<double>& t) {
            auto p = t.parameter(a);
            auto left = t.col_slice(p, 0, 2);
            auto right = t.col_slice(p, 2, 6);
            auto glued = t.col_concat({right, left});
            return t.sum_all(t.mul(glued, glued));
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("sum_axis2 + logsumexp_last") {
        auto res = gradcheck({&c}, [&](Tape<double>& t) {
            return weighted_loss(t, t.logsumexp_last(t.sum_axis2(t.parameter(c))), pull4);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("logsumexp_axis1") {
        const Tensor<double> pull = random_tensor(rng, {4, 5});
        auto res = gradcheck({&c}, [&](Tape<double>& t) {
            return weighted_loss(t, t.logsumexp_axis1(t.parameter(c)), pull);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
}

TEST_CASE("vae-specific fused ops match finite differences") {
    Rng rng(23);
    Parameter<double> mean("mu", random_tensor(rng, {5, 3}));
    Parameter<double> logvar("lv", random_tensor(rng, {5, 3}, 0.5));
    const Tensor<double> noise = random_tensor(rng, {5, 3});
    const Tensor<double> pull = random_tensor(rng, {5, 3});

    SUBCASE("reparameterize") {
        auto res = gradcheck({&mean, &logvar}, [&](Tape<double>& t) {
            return weighted_loss(t, t.reparameterize(t.parameter(mean), t.parameter(logvar), noise), pull);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("kl terms") {
        auto res = gradcheck({&mean, &logvar}, [&](Tape<double>& t) {
            return weighted_loss(t, t.kl_unit_gaussian_terms(t.parameter(mean), t.parameter(logvar)), pull);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("bernoulli nll") {
        Tensor<double> targets({5, 3});
        for (auto& v : targets.data) v = rng.uniform();
        auto res = gradcheck({&mean}, [&](Tape<double>& t) {
            return weighted_loss(t, t.bernoulli_nll(t.parameter(mean), targets), pull);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
    SUBCASE("gaussian log densities") {
        Parameter<double> z("z", random_tensor(rng, {5, 3}));
        auto res = gradcheck({&z, &mean, &logvar}, [&](Tape<double>& t) {
            auto zi = t.parameter(z);
            auto mi = t.parameter(mean);
            auto li = t.parameter(logvar);
            auto diag = t.sum_all(t.gaussian_log_density_diag(zi, mi, li));
            auto pairs = t.sum_all(t.sum_axis2(t.gaussian_log_density_pairs(zi, mi, li)));
            auto prior = t.sum_all(t.std_normal_log_density(zi));
            return t.add(t.add(diag, pairs), prior);
        });
        CHECK(res.max_rel_error < 1e-6);
    }
}

TEST_CASE("forward basics") {
    SUBCASE("zero weights and biases give all-zero output") {
        Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
        Tape<double> tape;
        auto y = tape.add_row_bias(tape.matmul(tape.constant(x), tape.constant(Tensor<double>({3, 4}))),
                                   tape.constant(Tensor<double>({4})));
        for (double v : tape.val(y).data) CHECK(v == 0.0);
    }
    SUBCASE("identity 1x1 dense maps [3.0] to [3.0]") {
        Tape<double> tape;
        auto y = tape.add_row_bias(
            tape.matmul(tape.constant(Tensor<double>({1, 1}, {3.0})),
                        tape.constant(Tensor<double>({1, 1}, {1.0}))),
            tape.constant(Tensor<double>({1})));
        CHECK(tape.val(y).data[0] == 3.0);
    }
    SUBCASE("two dense layers match a hand-evaluated matrix chain") {
        Rng rng(29);
        const Tensor<double> x = random_tensor(rng, {1, 16});
        const Tensor<double> w1 = random_tensor(rng, {16, 5});
        const Tensor<double> b1 = random_tensor(rng, {5});
        const Tensor<double> w2 = random_tensor(rng, {5, 2});
        const Tensor<double> b2 = random_tensor(rng, {2});

        Tape<double> tape;
        auto h = tape.add_row_bias(tape.matmul(tape.constant(x), tape.constant(w1)), tape.constant(b1));
        auto y = tape.add_row_bias(tape.matmul(h, tape.constant(w2)), tape.constant(b2));

        // direct matrix arithmetic
        double hid[5];
        for (int j = 0; j < 5; ++j) {
            hid[j] = b1.data[j];
            for (int k = 0; k < 16; ++k) hid[j] += x.data[k] * w1.data[static_cast<std::size_t>(k) * 5 + j];
        }
        for (int j = 0; j < 2; ++j) {
            double expect = b2.data[j];
            for (int k = 0; k < 5; ++k) expect += hid[k] * w2.data[static_cast<std::size_t>(k) * 2 + j];
            CHECK(tape.val(y).data[j] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward basics") {
    SUBCASE("loss = sum(w * x) gives gradient x on w") {
        Tensor<double> x({4}, {1.5, -2.0, 0.25, 3.0});
        Parameter<double> w("w", Tensor<double>({4}, {0.1, 0.2, 0.3, 0.4}));
        Tape<double> tape;
        auto loss = tape.sum_all(tape.mul(tape.parameter(w), tape.constant(x)));
        tape.backward(loss);
        for (int i = 0; i < 4; ++i) CHECK(w.grad.data[static_cast<std::size_t>(i)] == x.data[static_cast<std::size_t>(i)]);
    }
    SUBCASE("dead relu has zero gradient") {
        Parameter<double> w("w", Tensor<double>({1}, {-1.0}));
        Tape<double> tape;
        auto r = tape.relu(tape.parameter(w));
        auto loss = tape.sum_all(tape.mul(r, r));
        tape.backward(loss);
        CHECK(w.grad.data[0] == 0.0);
    }
    SUBCASE("unreachable parameters keep zero gradients") {
        Parameter<double> used("u", Tensor<double>({1}, {2.0}));
        Parameter<double> unused("x", Tensor<double>({1}, {5.0}));
        Tape<double> tape;
        auto loss = tape.sum_all(tape.parameter(used));
        tape.backward(loss);
        CHECK(used.grad.data[0] == 1.0);
        CHECK(unused.grad.data[0] == 0.0);
    }
    SUBCASE("backward rejects non-scalar loss and consumed graphs") {
        Parameter<double> w("w", Tensor<double>({2}, {1.0, 2.0}));
        Tape<double> tape;
        auto node = tape.parameter(w);
        CHECK_THROWS_AS(tape.backward(node), std::invalid_argument);
        auto loss = tape.sum_all(node);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient with fresh state is an exact no-op on values") {
        Rng rng(31);
        Parameter<float> p("p", deft_tests::random_tensor_f(rng, {3, 3}));
        const std::vector<float> before = p.value.data;
        std::vector<Parameter<float>*> params{&p};
        adam_step(params, 0.1f);
        CHECK(p.value.data == before);
        CHECK(p.step_count == 1);
    }
    SUBCASE("single step matches the hand-evaluated update") {
        Parameter<double> p("p", Tensor<double>({1}, {1.0}));
        p.grad.data[0] = 1.0;
        std::vector<Parameter<double>*> params{&p};
        adam_step(params, 0.1);
        // mhat = 1, vhat = 1 -> new value = 1 - 0.1 / (1 + 1e-8)
        CHECK(p.value.data[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
        CHECK(p.value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
        CHECK(p.grad.data[0] == 0.0);
    }
    SUBCASE("two steps with constant gradient match the recursion") {
        Parameter<double> p("p", Tensor<double>({1}, {1.0}));
        std::vector<Parameter<double>*> params{&p};
        // independent recursion in plain doubles
        double m = 0, v = 0, value = 1.0;
        for (int t = 1; t <= 2; ++t) {
            const double g = 0.5;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            const double mhat = m / (1.0 - std::pow(0.9, t));
            const double vhat = v / (1.0 - std::pow(0.999, t));
            value -= 0.05 * mhat / (std::sqrt(vhat) + 1e-8);

            p.grad.data[0] = g;
            adam_step(params, 0.05);
        }
        CHECK(p.value.data[0] == doctest::Approx(value).epsilon(1e-14));
        CHECK(p.step_count == 2);
    }
    SUBCASE("non-finite gradients are rejected") {
        Parameter<double> p("p", Tensor<double>({1}, {1.0}));
        p.grad.data[0] = std::numeric_limits<double>::infinity();
        std::vector<Parameter<double>*> params{&p};
        CHECK_THROWS_AS(adam_step(params, 0.1), std::runtime_error);
    }
}

TEST_CASE("reparameterize semantics") {
    Rng rng(37);
    Tensor<double> mean({1, 4}, {0.3, -1.0, 2.0, 0.0});
    Tensor<double> logvar({1, 4}, {0.0, 1.0, -0.7, 0.4});

    SUBCASE("zero noise returns the mean") {
        Tape<double> tape;
        auto z = tape.reparameterize(tape.constant(mean), tape.constant(logvar), Tensor<double>({1, 4}));
        CHECK(tape.val(z).data == mean.data);
    }
    SUBCASE("zero logvar adds the noise directly") {
        Tensor<double> noise = random_tensor(rng, {1, 4});
        Tape<double> tape;
        auto z = tape.reparameterize(tape.constant(mean), tape.constant(Tensor<double>({1, 4})), noise);
        for (int i = 0; i < 4; ++i)
            CHECK(tape.val(z).data[static_cast<std::size_t>(i)] ==
                  doctest::Approx(mean.data[static_cast<std::size_t>(i)] + noise.data[static_cast<std::size_t>(i)]).epsilon(1e-15));
    }
    SUBCASE("sample variance matches exp(logvar) within 3 standard errors") {
        const int n = 100000;
        const double lv = -0.35;
        double acc = 0, acc2 = 0;
        Tensor<double> mu({1, 1}, {0.7});
        Tensor<double> logv({1, 1}, {lv});
        for (int i = 0; i < n; ++i) {
            Tensor<double> noise({1, 1}, {rng.normal()});
            Tape<double> tape;
            auto z = tape.reparameterize(tape.constant(mu), tape.constant(logv), noise);
            const double v = tape.val(z).data[0];
            acc += v;
            acc2 += v * v;
        }
        const double sample_mean = acc / n;
        const double sample_var = acc2 / n - sample_mean * sample_mean;
        const double want = std::exp(lv);
        const double se = want * std::sqrt(2.0 / (n - 1));
        CHECK(std::fabs(sample_var - want) < 3 * se);
    }
}

TEST_CASE("kl closed form") {
    SUBCASE("zero mean unit variance gives zero") {
        Tape<double> tape;
        auto kl = tape.sum_all(tape.kl_unit_gaussian_terms(tape.constant(Tensor<double>({1, 3})),
                                                           tape.constant(Tensor<double>({1, 3}))));
        CHECK(tape.val(kl).item() == 0.0);
    }
    SUBCASE("mu=1 sigma=1 single dim gives 0.5") {
        Tape<double> tape;
        auto kl = tape.sum_all(tape.kl_unit_gaussian_terms(tape.constant(Tensor<double>({1, 1}, {1.0})),
                                                           tape.constant(Tensor<double>({1, 1}))));
        CHECK(tape.val(kl).item() == 0.5);
    }
    SUBCASE("non-negative, zero only at the prior") {
        Rng rng(41);
        for (int c = 0; c < 200; ++c) {
            Tensor<double> mu = random_tensor(rng, {1, 4});
            Tensor<double> lv = random_tensor(rng, {1, 4});
            Tape<double> tape;
            auto kl = tape.sum_all(tape.kl_unit_gaussian_terms(tape.constant(mu), tape.constant(lv)));
            const double v = tape.val(kl).item();
            CHECK(v >= 0.0);
            CHECK(v > 0.0);  // random draws never hit the prior exactly
        }
    }
    SUBCASE("matches a Monte Carlo estimate of E_q[log q - log p]") {
        Rng rng(43);
        const double mu = 0.8, lv = -0.4;
        Tape<double> tape;
        auto closed = tape.sum_all(tape.kl_unit_gaussian_terms(
            tape.constant(Tensor<double>({1, 1}, {mu})), tape.constant(Tensor<double>({1, 1}, {lv}))));
        const double want = tape.val(closed).item();

        const int n = 100000;
        const double sigma = std::exp(0.5 * lv);
        double acc = 0, acc2 = 0;
        for (int i = 0; i < n; ++i) {
            const double z = mu + sigma * rng.normal();
            const double logq = -0.5 * (std::log(2 * M_PI) + lv + (z - mu) * (z - mu) / std::exp(lv));
            const double logp = -0.5 * (std::log(2 * M_PI) + z * z);
            const double term = logq - logp;
            acc += term;
            acc2 += term * term;
        }
        const double est = acc / n;
        const double se = std::sqrt((acc2 / n - est * est) / n);
        CHECK(std::fabs(est - want) < 3 * se);
    }
}

TEST_CASE("bernoulli nll values") {
    SUBCASE("zero logits, half targets cost ln 2 per pixel") {
        Tape<double> tape;
        auto nll = tape.bernoulli_nll(tape.constant(Tensor<double>({2, 2})),
                                      Tensor<double>::full({2, 2}, 0.5));
        for (double v : tape.val(nll).data) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("saturated correct logits cost ~0") {
        Tape<double> tape;
        auto nll = tape.bernoulli_nll(tape.constant(Tensor<double>::full({1, 3}, 30.0)),
                                      Tensor<double>::full({1, 3}, 1.0));
        for (double v : tape.val(nll).data) CHECK(v < 1e-12);
    }
    SUBCASE("random cases match the direct formula in 64-bit") {
        Rng rng(47);
        for (int c = 0; c < 100; ++c) {
            const double l = 4.0 * rng.normal();
            const double t = rng.uniform();
            Tape<double> tape;
            auto nll = tape.bernoulli_nll(tape.constant(Tensor<double>({1, 1}, {l})),
                                          Tensor<double>({1, 1}, {t}));
            const double sig = 1.0 / (1.0 + std::exp(-l));
            const double direct = -(t * std::log(sig) + (1.0 - t) * std::log(1.0 - sig));
            CHECK(tape.val(nll).item() == doctest::Approx(direct).epsilon(1e-9));
        }
    }
    SUBCASE("targets outside [0,1] are rejected") {
        Tape<double> tape;
        CHECK_THROWS_AS(tape.bernoulli_nll(tape.constant(Tensor<double>({1, 1})),
                                           Tensor<double>({1, 1}, {1.5})),
                        std::invalid_argument);
    }
}

TEST_CASE("float32 gradients track finite differences at the loose tolerance") {
    // the 64-bit suites pin 1e-5; single precision gets 1e-3
    Rng rng(59);
    Parameter<float> w("w", deft_tests::random_tensor_f(rng, {6, 5}));
    Parameter<float> b("b", deft_tests::random_tensor_f(rng, {5}));
    const Tensor<float> x = deft_tests::random_tensor_f(rng, {4, 6});

    auto eval = [&]() {
        Tape<float> t;
        auto y = t.relu(t.add_row_bias(t.matmul(t.constant(x), t.parameter(w)), t.parameter(b)));
        return t.val(t.sum_all(t.mul(y, y))).item();
    };
    {
        Tape<float> t;
        auto y = t.relu(t.add_row_bias(t.matmul(t.constant(x), t.parameter(w)), t.parameter(b)));
        t.backward(t.sum_all(t.mul(y, y)));
    }
    float gmax = 0;
    for (Parameter<float>* p : {&w, &b})
        for (float g : p->grad.data) gmax = std::max(gmax, std::fabs(g));
    // single-precision differencing drowns small gradients in loss rounding,
    // so only elements that carry a meaningful share of the gradient count
    const float h = 1e-2f;
    const float base = eval();
    long checked = 0;
    for (Parameter<float>* p : {&w, &b}) {
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const float a = p->grad.data[i];
            if (std::fabs(a) <= 0.01f * gmax) continue;
            const float orig = p->value.data[i];
            p->value.data[i] = orig + h;
            const float up = eval();
            p->value.data[i] = orig - h;
            const float down = eval();
            p->value.data[i] = orig;
            const float fwd = (up - base) / h;
            const float bwd = (base - down) / h;
            if (std::fabs(fwd - bwd) / std::max({std::fabs(fwd), std::fabs(bwd), 1e-6f}) > 0.05f)
                continue;  // relu kink inside the interval
            const float numeric = (up - down) / (2 * h);
            const float rel = std::fabs(a - numeric) / std::max(std::fabs(a), std::fabs(numeric));
            CHECK(rel < 1e-3f);
            ++checked;
        }
    }
    CHECK(checked > 20);
}

TEST_CASE("forward and backward are deterministic across runs") {
    auto run = [](std::vector<double>& grads) {
        Rng rng(53);
        Parameter<double> w("w", random_tensor(rng, {6, 6}));
        const Tensor<double> x = random_tensor(rng, {2, 6});
        Tape<double> tape;
        auto y = tape.relu(tape.matmul(tape.constant(x), tape.parameter(w)));
        auto loss = tape.mean_all(tape.mul(y, y));
        tape.backward(loss);
        grads = w.grad.data;
        return tape.val(loss).item();
    };
    std::vector<double> g1, g2;
    const double l1 = run(g1);
    const double l2 = run(g2);
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}
