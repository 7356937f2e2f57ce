#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "vmt/autodiff.hpp"
#include "vmt/errors.hpp"
#include "vmt/rng.hpp"
#include "vmt/tensor.hpp"

using namespace vmt;

namespace {

// Central finite differences of a scalar-valued function of one tensor.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                    double h = 1e-6) {
    Tensor g(x.shape());
    Tensor xp = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(xp);
        xp[i] = orig - h;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

void expect_close(const Tensor& a, const Tensor& b, double tol, const char* what) {
    ASSERT_TRUE(a.same_shape(b)) << what;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        EXPECT_NEAR(a[i], b[i], tol) << what << " at " << i;
    }
}

}  // namespace

TEST(Tensor, BasicOps) {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = add(a, b);
    EXPECT_DOUBLE_EQ(c[0], 6);
    EXPECT_DOUBLE_EQ(c[3], 12);
    EXPECT_DOUBLE_EQ(sub(b, a)[2], 4);
    EXPECT_DOUBLE_EQ(mul(a, b)[1], 12);
    EXPECT_DOUBLE_EQ(scale(a, 2.0)[3], 8);
    EXPECT_THROW(add(a, Tensor({3})), ShapeError);
}

TEST(Tensor, MatmulAgainstHandComputed) {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c.at({0, 0}), 58);
    EXPECT_DOUBLE_EQ(c.at({0, 1}), 64);
    EXPECT_DOUBLE_EQ(c.at({1, 0}), 139);
    EXPECT_DOUBLE_EQ(c.at({1, 1}), 154);
}

TEST(Tensor, PermuteRoundTrip) {
    Rng rng(1);
    Tensor x = rng.normal_tensor({2, 3, 4, 5});
    Tensor p = permuted(x, {2, 0, 3, 1});
    EXPECT_EQ(p.shape(), (std::vector<std::int64_t>{4, 2, 5, 3}));
    Tensor back = permuted(p, {1, 3, 0, 2});
    expect_close(back, x, 0.0, "permute inverse");
    EXPECT_DOUBLE_EQ(p.at({1, 0, 2, 1}), x.at({0, 1, 1, 2}));
}

TEST(Tensor, CosineAndNorm) {
    Tensor a({2}, {3, 4});
    EXPECT_DOUBLE_EQ(a.l2_norm(), 5);
    Tensor u = l2_normalized(a);
    EXPECT_NEAR(u.l2_norm(), 1.0, 1e-12);
    Tensor b({2}, {-4, 3});
    EXPECT_NEAR(cosine_similarity(a, b), 0.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
}

TEST(Rng, DeterministicAndForkIndependent) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c(42);
    Rng f1 = c.fork("x"), f2 = c.fork("y");
    EXPECT_NE(f1.next_u64(), f2.next_u64());
    // fork does not consume parent state
    Rng d(42);
    (void)d.fork("x");
    Rng e(42);
    EXPECT_EQ(d.next_u64(), e.next_u64());
}

TEST(Rng, NormalMoments) {
    Rng rng(7);
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Autodiff, AddMulScaleGrads) {
    Rng rng(3);
    Tensor av = rng.normal_tensor({3, 4});
    Tensor bv = rng.normal_tensor({3, 4});
    Graph g;
    Var a = g.leaf(av, true);
    Var b = g.leaf(bv, true);
    Var loss = g.sum_all(g.mul(g.add(a, b), g.scale(b, 2.0)));
    g.backward(loss);

    auto fa = [&](const Tensor& t) {
        return mul(add(t, bv), scale(bv, 2.0)).sum();
    };
    auto fb = [&](const Tensor& t) {
        return mul(add(av, t), scale(t, 2.0)).sum();
    };
    expect_close(a.grad(), numeric_grad(fa, av), 1e-6, "da");
    expect_close(b.grad(), numeric_grad(fb, bv), 1e-6, "db");
}

TEST(Autodiff, LinearAndBiasGrads) {
    Rng rng(4);
    Tensor xv = rng.normal_tensor({5, 3});
    Tensor wv = rng.normal_tensor({2, 3});
    Tensor bv = rng.normal_tensor({2});
    Graph g;
    Var x = g.leaf(xv, true);
    Var w = g.leaf(wv, true);
    Var b = g.leaf(bv, true);
    Var y = g.linear(x, w, b);
    Var loss = g.sum_sq(y);
    g.backward(loss);

    auto f = [&](const Tensor& x2, const Tensor& w2, const Tensor& b2) {
        Tensor y2 = linear_nobias(x2, w2);
        for (std::int64_t r = 0; r < y2.dim(0); ++r)
            for (std::int64_t c = 0; c < y2.dim(1); ++c) y2.at({r, c}) += b2[c];
        return y2.sum_sq();
    };
    expect_close(x.grad(),
                 numeric_grad([&](const Tensor& t) { return f(t, wv, bv); }, xv), 1e-5, "dx");
    expect_close(w.grad(),
                 numeric_grad([&](const Tensor& t) { return f(xv, t, bv); }, wv), 1e-5, "dw");
    expect_close(b.grad(),
                 numeric_grad([&](const Tensor& t) { return f(xv, wv, t); }, bv), 1e-5, "db");
}

TEST(Autodiff, BmmSoftmaxGrads) {
    Rng rng(5);
    Tensor av = rng.normal_tensor({2, 3, 4});
    Tensor bv = rng.normal_tensor({2, 4, 3});
    Graph g;
    Var a = g.leaf(av, true);
    Var b = g.leaf(bv, true);
    Var loss = g.sum_sq(g.softmax_last(g.bmm(a, b)));
    g.backward(loss);

    auto f = [](const Tensor& a2, const Tensor& b2) {
        Graph h;
        return h.sum_sq(h.softmax_last(h.bmm(h.constant(a2), h.constant(b2)))).value().item();
    };
    expect_close(a.grad(),
                 numeric_grad([&](const Tensor& t) { return f(t, bv); }, av), 1e-5, "da");
    expect_close(b.grad(),
                 numeric_grad([&](const Tensor& t) { return f(av, t); }, bv), 1e-5, "db");
}

TEST(Autodiff, LayerNormGeluGrads) {
    Rng rng(6);
    Tensor xv = rng.normal_tensor({4, 6});
    Tensor gv = rng.normal_tensor({6});
    Tensor bv = rng.normal_tensor({6});
    Graph g;
    Var x = g.leaf(xv, true);
    Var ga = g.leaf(gv, true);
    Var be = g.leaf(bv, true);
    Var loss = g.sum_sq(g.gelu(g.layer_norm(x, ga, be)));
    g.backward(loss);

    auto f = [](const Tensor& x2, const Tensor& g2, const Tensor& b2) {
        Graph h;
        return h.sum_sq(h.gelu(h.layer_norm(h.constant(x2), h.constant(g2), h.constant(b2))))
            .value()
            .item();
    };
    expect_close(x.grad(),
                 numeric_grad([&](const Tensor& t) { return f(t, gv, bv); }, xv), 2e-5, "dx");
    expect_close(ga.grad(),
                 numeric_grad([&](const Tensor& t) { return f(xv, t, bv); }, gv), 2e-5, "dg");
    expect_close(be.grad(),
                 numeric_grad([&](const Tensor& t) { return f(xv, gv, t); }, bv), 2e-5, "db");
}

TEST(Autodiff, PermuteReshapeConcatRowOps) {
    Rng rng(8);
    Tensor xv = rng.normal_tensor({2, 3, 4});
    Tensor yv = rng.normal_tensor({6, 2});
    Graph g;
    Var x = g.leaf(xv, true);
    Var y = g.leaf(yv, true);
    Var xp = g.reshape(g.permute(x, {1, 0, 2}), {6, 4});
    Var cat = g.concat_last(xp, y);  // [6, 6]
    Var r = g.row(cat, 2);
    Var loss = g.sum_sq(g.set_row(cat, 4, r));
    g.backward(loss);

    auto f = [](const Tensor& x2, const Tensor& y2) {
        Graph h;
        Var xx = h.constant(x2);
        Var yy = h.constant(y2);
        Var xp2 = h.reshape(h.permute(xx, {1, 0, 2}), {6, 4});
        Var cat2 = h.concat_last(xp2, yy);
        Var r2 = h.row(cat2, 2);
        return h.sum_sq(h.set_row(cat2, 4, r2)).value().item();
    };
    expect_close(x.grad(),
                 numeric_grad([&](const Tensor& t) { return f(t, yv); }, xv), 1e-5, "dx");
    expect_close(y.grad(),
                 numeric_grad([&](const Tensor& t) { return f(xv, t); }, yv), 1e-5, "dy");
}

TEST(Autodiff, MseMatchesManual) {
    Rng rng(9);
    Tensor av = rng.normal_tensor({3, 3});
    Tensor bv = rng.normal_tensor({3, 3});
    Graph g;
    Var a = g.leaf(av, true);
    Var loss = g.mse(a, g.constant(bv));
    double manual = 0;
    for (std::int64_t i = 0; i < av.numel(); ++i) {
        manual += (av[i] - bv[i]) * (av[i] - bv[i]);
    }
    manual /= static_cast<double>(av.numel());
    EXPECT_DOUBLE_EQ(loss.value().item(), manual);
    g.backward(loss);
    expect_close(a.grad(),
                 numeric_grad(
                     [&](const Tensor& t) {
                         double acc = 0;
                         for (std::int64_t i = 0; i < t.numel(); ++i) {
                             acc += (t[i] - bv[i]) * (t[i] - bv[i]);
                         }
                         return acc / static_cast<double>(t.numel());
                     },
                     av),
                 1e-6, "da");
}

TEST(Autodiff, NoGradThroughConstants) {
    Graph g;
    Var a = g.constant(Tensor({2}, {1, 2}));
    Var b = g.leaf(Tensor({2}, {3, 4}), true);
    Var loss = g.sum_all(g.mul(a, b));
    g.backward(loss);
    EXPECT_FALSE(g.grad_present(a.id()));
    EXPECT_TRUE(g.grad_present(b.id()));
    EXPECT_DOUBLE_EQ(b.grad()[0], 1);
    EXPECT_DOUBLE_EQ(b.grad()[1], 2);
}

TEST(Autodiff, SliceRowsGrad) {
    Rng rng(11);
    Tensor xv = rng.normal_tensor({5, 3});
    Graph g;
    Var x = g.leaf(xv, true);
    Var loss = g.sum_sq(g.slice_rows(x, 1, 3));
    g.backward(loss);
    auto f = [](const Tensor& t) {
        double acc = 0;
        for (std::int64_t r = 1; r < 4; ++r)
            for (std::int64_t c = 0; c < 3; ++c) acc += t.at({r, c}) * t.at({r, c});
        return acc;
    };
    expect_close(x.grad(), numeric_grad(f, xv), 1e-5, "dx");
}
