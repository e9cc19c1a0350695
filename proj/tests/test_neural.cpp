#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "acvae/gradcheck.hpp"
#include "acvae/layers.hpp"
#include "acvae/optim.hpp"
#include "acvae/rng.hpp"

using namespace acvae;

namespace {

using T = Tensor<double>;

void fill_uniform(T& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (double& v : t.data) v = rng.uniform(lo, hi);
}

std::vector<double> flatten(const std::vector<const T*>& parts) {
    std::vector<double> out;
    for (const T* p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
    return out;
}

void unflatten(const std::vector<double>& theta, const std::vector<T*>& parts) {
    std::size_t off = 0;
    for (T* p : parts) {
        std::copy(theta.begin() + off, theta.begin() + off + p->size(), p->data.begin());
        off += p->size();
    }
}

void collect_grads(const std::vector<const T*>& grads, std::vector<double>* out) {
    out->clear();
    for (const T* g : grads) out->insert(out->end(), g->data.begin(), g->data.end());
}

} // namespace

TEST_CASE("affine with zero weights and bias gives zero output") {
    T W({3, 4}), b({3}), x({2, 4}), y({2, 3});
    Rng rng(1);
    fill_uniform(x, rng);
    affine_forward(W, b, x, y);
    for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("affine gradient check over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed, "affine-check");
        T W({3, 5}), b({3}), x({4, 5}), r({4, 3});
        fill_uniform(W, rng);
        fill_uniform(b, rng);
        fill_uniform(x, rng);
        fill_uniform(r, rng); // fixed projection to a scalar

        FlatFn f = [&](const std::vector<double>& theta, std::vector<double>* grad) {
            T Wc = W, bc = b, xc = x;
            unflatten(theta, {&Wc, &bc, &xc});
            T y({4, 3});
            affine_forward(Wc, bc, xc, y);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += r.data[i] * y.data[i];
            if (grad) {
                T dW(Wc.shape), db(bc.shape), dx(xc.shape);
                affine_backward(Wc, xc, r, dW, db, dx);
                collect_grads({&dW, &db, &dx}, grad);
            }
            return loss;
        };
        auto res = gradient_check(f, flatten({&W, &b, &x}));
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("three-layer affine+tanh stack gradient check over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed, "mlp-check");
        T W1({6, 4}), b1({6}), W2({5, 6}), b2({5}), W3({2, 5}), b3({2}), x({3, 4}), r({3, 2});
        for (T* t : {&W1, &b1, &W2, &b2, &W3, &b3, &x, &r}) fill_uniform(*t, rng);

        FlatFn f = [&](const std::vector<double>& theta, std::vector<double>* grad) {
            T w1 = W1, c1 = b1, w2 = W2, c2 = b2, w3 = W3, c3 = b3, xc = x;
            unflatten(theta, {&w1, &c1, &w2, &c2, &w3, &c3, &xc});
            T h1({3, 6}), h2({3, 5}), h3({3, 2});
            affine_forward(w1, c1, xc, h1);
            tanh_inplace(h1);
            affine_forward(w2, c2, h1, h2);
            tanh_inplace(h2);
            affine_forward(w3, c3, h2, h3);
            tanh_inplace(h3);
            double loss = 0.0;
            for (std::size_t i = 0; i < h3.size(); ++i) loss += r.data[i] * h3.data[i];
            if (grad) {
                T dW1(w1.shape), db1(c1.shape), dW2(w2.shape), db2(c2.shape), dW3(w3.shape),
                    db3(c3.shape), dx(xc.shape);
                T dh3(h3.shape), dh2(h2.shape), dh1(h1.shape), dpre(h3.shape);
                for (std::size_t i = 0; i < dh3.size(); ++i) dh3.data[i] = r.data[i];
                tanh_backward(h3, dh3, dpre);
                affine_backward(w3, h2, dpre, dW3, db3, dh2);
                T dpre2(h2.shape);
                tanh_backward(h2, dh2, dpre2);
                affine_backward(w2, h1, dpre2, dW2, db2, dh1);
                T dpre1(h1.shape);
                tanh_backward(h1, dh1, dpre1);
                affine_backward(w1, xc, dpre1, dW1, db1, dx);
                collect_grads({&dW1, &db1, &dW2, &db2, &dW3, &db3, &dx}, grad);
            }
            return loss;
        };
        auto res = gradient_check(f, flatten({&W1, &b1, &W2, &b2, &W3, &b3, &x}));
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("softmax cross-entropy gradient equals softmax minus onehot") {
    Rng rng(3);
    T logits({3, 7});
    fill_uniform(logits, rng, -2, 2);
    std::vector<int> targets = {2, 5, -1}; // last row masked

    SoftmaxXentTrace<double> tr;
    softmax_xent_forward(logits, targets, tr);

    // rows sum to 1
    for (std::size_t b = 0; b < 3; ++b) {
        double s = 0.0;
        for (std::size_t v = 0; v < 7; ++v) s += tr.probs.at(b, v);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

    T dlogits(logits.shape);
    softmax_xent_backward(tr, targets, 1.0, dlogits);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t v = 0; v < 7; ++v) {
            double expect = tr.probs.at(b, v) - (static_cast<int>(v) == targets[b] ? 1.0 : 0.0);
            CHECK(dlogits.at(b, v) == doctest::Approx(expect).epsilon(1e-12));
        }
    for (std::size_t v = 0; v < 7; ++v) CHECK(dlogits.at(2, v) == 0.0);

    // finite-difference oracle on the logits
    FlatFn f = [&](const std::vector<double>& theta, std::vector<double>* grad) {
        T l = logits;
        unflatten(theta, {&l});
        SoftmaxXentTrace<double> t2;
        double loss = softmax_xent_forward(l, targets, t2);
        if (grad) {
            T d(l.shape);
            softmax_xent_backward(t2, targets, 1.0, d);
            collect_grads({&d}, grad);
        }
        return loss;
    };
    auto res = gradient_check(f, flatten({&logits}));
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("lstm on zero-length input returns the initial state unchanged") {
    T W({8, 3}), U({8, 2}), b({8});
    Rng rng(4);
    fill_uniform(W, rng);
    fill_uniform(U, rng);
    T h0({2, 2}), c0({2, 2});
    fill_uniform(h0, rng);
    fill_uniform(c0, rng);

    std::vector<T> xs; // no steps at all
    std::vector<int> lengths = {0, 0};
    LstmTrace<double> tr;
    lstm_forward(W, U, b, xs, lengths, tr, &h0, &c0);
    CHECK(tr.h_last().data == h0.data);
    CHECK(tr.c_last().data == c0.data);

    // a row with length 0 inside a nonempty batch also keeps its state
    std::vector<T> one_step(1, T({2, 3}));
    fill_uniform(one_step[0], rng);
    std::vector<int> mixed = {1, 0};
    LstmTrace<double> tr2;
    lstm_forward(W, U, b, one_step, mixed, tr2, &h0, &c0);
    CHECK(tr2.h_last().at(1, 0) == h0.at(1, 0));
    CHECK(tr2.h_last().at(1, 1) == h0.at(1, 1));
}

TEST_CASE("lstm gradient check over 20 seeds with ragged lengths") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed, "lstm-check");
        const std::size_t B = 2, E = 3, H = 4, Tsteps = 4;
        T W({4 * H, E}), U({4 * H, H}), b({4 * H});
        fill_uniform(W, rng, -0.5, 0.5);
        fill_uniform(U, rng, -0.5, 0.5);
        fill_uniform(b, rng, -0.5, 0.5);
        std::vector<T> xs(Tsteps, T({B, E}));
        for (auto& x : xs) fill_uniform(x, rng);
        std::vector<int> lengths = {4, 2};
        T r_last({B, H});
        fill_uniform(r_last, rng);
        std::vector<T> r_steps(Tsteps, T({B, H}));
        for (auto& r : r_steps) fill_uniform(r, rng, -0.3, 0.3);

        FlatFn f = [&](const std::vector<double>& theta, std::vector<double>* grad) {
            T Wc = W, Uc = U, bc = b;
            std::vector<T> xc = xs;
            std::vector<T*> parts = {&Wc, &Uc, &bc};
            for (auto& x : xc) parts.push_back(&x);
            unflatten(theta, parts);

            LstmTrace<double> tr;
            lstm_forward(Wc, Uc, bc, xc, lengths, tr);
            double loss = 0.0;
            for (std::size_t i = 0; i < r_last.size(); ++i)
                loss += r_last.data[i] * tr.h_last().data[i];
            for (std::size_t t = 0; t < Tsteps; ++t)
                for (std::size_t i = 0; i < r_steps[t].size(); ++i)
                    loss += r_steps[t].data[i] * tr.h[t].data[i];
            if (grad) {
                T dW(Wc.shape), dU(Uc.shape), db(bc.shape);
                std::vector<T> dxs(Tsteps, T({B, E}));
                lstm_backward(Wc, Uc, xc, lengths, tr, &r_steps, &r_last, nullptr, dW, dU, db, dxs);
                std::vector<const T*> gparts = {&dW, &dU, &db};
                for (auto& dx : dxs) gparts.push_back(&dx);
                collect_grads(gparts, grad);
            }
            return loss;
        };
        std::vector<const T*> parts = {&W, &U, &b};
        for (auto& x : xs) parts.push_back(&x);
        auto res = gradient_check(f, flatten(parts));
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("embedding gradient check") {
    Rng rng(9);
    T table({6, 3});
    fill_uniform(table, rng);
    std::vector<int> ids = {0, 3, 3, -1}; // repeated id accumulates, -1 masked
    T r({4, 3});
    fill_uniform(r, rng);

    FlatFn f = [&](const std::vector<double>& theta, std::vector<double>* grad) {
        T tc = table;
        unflatten(theta, {&tc});
        T out({4, 3});
        embedding_forward(tc, ids, out);
        double loss = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += r.data[i] * out.data[i];
        if (grad) {
            T dt(tc.shape);
            embedding_backward(ids, r, dt);
            collect_grads({&dt}, grad);
        }
        return loss;
    };
    auto res = gradient_check(f, flatten({&table}));
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("identity flat function has zero gradient error") {
    FlatFn f = [](const std::vector<double>& theta, std::vector<double>* grad) {
        if (grad) (*grad)[0] = 1.0;
        return theta[0];
    };
    auto res = gradient_check(f, {0.37});
    CHECK(res.max_rel_err < 1e-9);
}

TEST_CASE("deterministic forward passes are bit-identical") {
    Rng rng(12);
    T W({8, 3}), U({8, 2}), b({8});
    fill_uniform(W, rng);
    fill_uniform(U, rng);
    fill_uniform(b, rng);
    std::vector<T> xs(3, T({2, 3}));
    for (auto& x : xs) fill_uniform(x, rng);
    std::vector<int> lengths = {3, 3};
    LstmTrace<double> a, c;
    lstm_forward(W, U, b, xs, lengths, a);
    lstm_forward(W, U, b, xs, lengths, c);
    CHECK(a.h_last().data == c.h_last().data);
}

// --------------------------------------------------------------------------
// optimizer

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
    Parameter<double> p("w", {3});
    p.value.data = {1.0, -2.0, 3.0};
    std::vector<Parameter<double>*> ps = {&p};
    OptimizerConfig cfg;
    adam_step(ps, cfg, 0);
    CHECK(p.value.data == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("learning rate decays multiplicatively per epoch") {
    OptimizerConfig cfg; // initial 1e-4, decay 0.99
    CHECK(cfg.rate_at_epoch(0) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(cfg.rate_at_epoch(1) == doctest::Approx(9.9e-5).epsilon(1e-12));
}

TEST_CASE("single adam step matches the hand-evaluated recurrence") {
    // g=1, t=1: m=0.1, v=0.001, mhat=m/(1-0.9)=1, vhat=v/(1-0.999)=1
    // update = lr * 1 / (sqrt(1) + eps)
    Parameter<double> p("w", {1});
    p.value.data = {1.0};
    p.grad.data = {1.0};
    std::vector<Parameter<double>*> ps = {&p};
    OptimizerConfig cfg;
    cfg.clip_norm = 0; // keep g exactly 1
    adam_step(ps, cfg, 0);
    double expect = 1.0 - 1e-4 * 1.0 / (std::sqrt(1.0) + 1e-8);
    CHECK(p.value.data[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(p.m.data[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p.v.data[0] == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(p.step == 1);
}

TEST_CASE("global gradient clipping caps the norm") {
    Parameter<double> a("a", {2}), b("b", {2});
    a.grad.data = {30.0, 40.0};
    b.grad.data = {0.0, 120.0};
    std::vector<Parameter<double>*> ps = {&a, &b};
    double pre = clip_gradients(ps, 5.0);
    CHECK(pre == doctest::Approx(130.0).epsilon(1e-12)); // sqrt(900+1600+14400)
    double post_sq = 0.0;
    for (auto* p : ps)
        for (double g : p->grad.data) post_sq += g * g;
    CHECK(std::sqrt(post_sq) <= 5.0 + 1e-9);
}

TEST_CASE("non-finite gradient names the parameter") {
    Parameter<double> p("prior.W1", {1});
    p.grad.data = {std::numeric_limits<double>::quiet_NaN()};
    std::vector<Parameter<double>*> ps = {&p};
    OptimizerConfig cfg;
    CHECK_THROWS_WITH_AS(adam_step(ps, cfg, 0), doctest::Contains("prior.W1"), std::runtime_error);
}

TEST_CASE("checkpoint round trip is exact for float parameters") {
    Rng rng(77);
    Parameter<float> a("a.W", {4, 3}), b("b.b", {5});
    for (float& v : a.value.data) v = static_cast<float>(rng.uniform(-1, 1));
    for (float& v : b.value.data) v = static_cast<float>(rng.uniform(-1, 1));
    for (float& v : a.m.data) v = static_cast<float>(rng.uniform(-1, 1));
    a.step = 42;

    auto path = std::string("acvae_test_ckpt.bin");
    save_checkpoint<float>(path, {&a, &b});

    Parameter<float> a2("a.W", {4, 3}), b2("b.b", {5});
    std::vector<Parameter<float>*> ps = {&a2, &b2};
    load_checkpoint(path, ps);
    CHECK(a2.value.data == a.value.data);
    CHECK(a2.m.data == a.m.data);
    CHECK(a2.step == 42);
    CHECK(b2.value.data == b.value.data);

    Parameter<float> wrong("a.W", {3, 4});
    std::vector<Parameter<float>*> ws = {&wrong};
    CHECK_THROWS_WITH_AS(load_checkpoint(path, ws), doctest::Contains("shape"), std::runtime_error);

    Parameter<float> missing("nope", {1});
    std::vector<Parameter<float>*> ms = {&missing};
    CHECK_THROWS_WITH_AS(load_checkpoint(path, ms), doctest::Contains("missing entry 'nope'"),
                         std::runtime_error);
    std::remove(path.c_str());
}
