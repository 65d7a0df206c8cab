#include <doctest.h>

#include <cmath>

#include "hvrnn/gradcheck.hpp"
#include "hvrnn/graph.hpp"
#include "hvrnn/nn.hpp"
#include "hvrnn/rng.hpp"

using namespace hvrnn;
using diff::Graph;
using diff::ParamStore;
using diff::Var;

TEST_CASE("backward of sum is ones") {
    ParamStore<double> ps;
    auto& p = ps.create("p", {3});
    p.value = Tensor<double>::from({3}, {5.0, -2.0, 7.0});
    Graph<double> g;
    g.backward(g.sum_all(g.param(p)));
    CHECK(p.grad[0] == 1.0);
    CHECK(p.grad[1] == 1.0);
    CHECK(p.grad[2] == 1.0);
}

TEST_CASE("backward of sum of squares is 2p") {
    ParamStore<double> ps;
    auto& p = ps.create("p", {3});
    p.value = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
    Graph<double> g;
    Var<double> v = g.param(p);
    g.backward(g.sum_all(g.mul(v, v)));
    CHECK(p.grad[0] == doctest::Approx(2.0));
    CHECK(p.grad[1] == doctest::Approx(4.0));
    CHECK(p.grad[2] == doctest::Approx(6.0));
}

TEST_CASE("backward of sigmoid at zero is 0.25, matches finite differences") {
    ParamStore<double> ps;
    auto& p = ps.create("p", {1});
    p.value[0] = 0.0;
    Graph<double> g;
    g.backward(g.sum_all(g.sigmoid(g.param(p))));
    CHECK(p.grad[0] == doctest::Approx(0.25).epsilon(1e-10));

    auto f = [](const Tensor<double>& x) { return 1.0 / (1.0 + std::exp(-x[0])); };
    Tensor<double> fd = diff::finite_difference_gradient(f, Tensor<double>::scalar(0.0), 1e-5);
    CHECK(fd[0] == doctest::Approx(p.grad[0]).epsilon(1e-6));
}

TEST_CASE("gradient accumulation sums across backward calls") {
    ParamStore<double> ps;
    auto& p = ps.create("p", {2});
    p.value = Tensor<double>::from({2}, {1.0, 2.0});
    Graph<double> g;
    Var<double> loss = g.sum_all(g.param(p));
    g.backward(loss);
    g.backward(loss);
    CHECK(p.grad[0] == 2.0);
    CHECK(p.grad[1] == 2.0);
    ps.zero_grads();
    g.backward(loss);
    CHECK(p.grad[0] == 1.0);
}

TEST_CASE("sum of two losses equals sum of separate backward passes") {
    rng::Counter r(3);
    ParamStore<double> ps;
    auto& p = ps.create("p", {4});
    for (int i = 0; i < 4; ++i) p.value[i] = r.uniform(-1, 1);

    auto build = [&](Graph<double>& g, int which) {
        Var<double> v = g.param(p);
        Var<double> l1 = g.sum_all(g.sigmoid(v));
        Var<double> l2 = g.sum_all(g.mul(v, v));
        if (which == 1) return l1;
        if (which == 2) return l2;
        return g.add(l1, l2);
    };

    Tensor<double> separate({4});
    {
        Graph<double> g;
        ps.zero_grads();
        g.backward(build(g, 1));
        Graph<double> g2;
        g2.backward(build(g2, 2));
        separate = p.grad;
    }
    ps.zero_grads();
    Graph<double> g;
    g.backward(build(g, 0));
    for (int i = 0; i < 4; ++i) CHECK(p.grad[i] == doctest::Approx(separate[i]).epsilon(1e-12));
}

TEST_CASE("backward is deterministic across repeated runs") {
    rng::Counter r(9);
    ParamStore<double> ps;
    auto& p = ps.create("p", {8});
    for (int i = 0; i < 8; ++i) p.value[i] = r.uniform(-1, 1);

    auto run = [&] {
        ps.zero_grads();
        Graph<double> g;
        Var<double> v = g.param(p);
        Var<double> h = g.tanh(g.affine(v, 1.7, 0.1));
        g.backward(g.sum_all(g.mul(h, h)));
        return p.grad;
    };
    Tensor<double> a = run();
    Tensor<double> b = run();
    for (int i = 0; i < 8; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("non-scalar loss is a contract violation") {
    ParamStore<double> ps;
    auto& p = ps.create("p", {3});
    Graph<double> g;
    CHECK_THROWS_AS(g.backward(g.param(p)), ContractViolation);
}

TEST_CASE("nan during backward names the offending op") {
    ParamStore<double> ps;
    auto& p = ps.create("p", {1});
    p.value[0] = 800.0;  // exp overflows to inf
    Graph<double> g;
    Var<double> e = g.exp(g.param(p));
    CHECK_THROWS_AS(g.backward(g.sum_all(e)), NumericError);
    try {
        Graph<double> g2;
        g2.backward(g2.sum_all(g2.exp(g2.param(p))));
    } catch (const NumericError& err) {
        CHECK(std::string(err.what()).find("backward") != std::string::npos);
    }
}

TEST_CASE("finite differences: sum of squares, constant, exp") {
    auto sumsq = [](const Tensor<double>& x) {
        double s = 0;
        for (std::int64_t i = 0; i < x.numel(); ++i) s += x[i] * x[i];
        return s;
    };
    Tensor<double> g1 = diff::finite_difference_gradient(sumsq, Tensor<double>::scalar(3.0), 1e-4);
    CHECK(g1[0] == doctest::Approx(6.0).epsilon(1e-6));

    auto constant = [](const Tensor<double>&) { return 4.25; };
    Tensor<double> g2 =
        diff::finite_difference_gradient(constant, Tensor<double>::from({3}, {1, 2, 3}), 1e-4);
    for (int i = 0; i < 3; ++i) CHECK(g2[i] == 0.0);

    auto sumexp = [](const Tensor<double>& x) {
        double s = 0;
        for (std::int64_t i = 0; i < x.numel(); ++i) s += std::exp(x[i]);
        return s;
    };
    Tensor<double> g3 =
        diff::finite_difference_gradient(sumexp, Tensor<double>::from({2}, {0.0, 1.0}), 1e-5);
    CHECK(g3[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(g3[1] == doctest::Approx(std::exp(1.0)).epsilon(1e-7));

    CHECK_THROWS_AS(diff::finite_difference_gradient(sumsq, Tensor<double>::scalar(1.0), 0.0),
                    ContractViolation);
}

TEST_CASE("grad_check passes a 3x3 convolution at 1e-4") {
    rng::Counter r(21);
    ParamStore<double> ps;
    auto& x = ps.create("x", {2, 2, 5, 5});
    for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = r.uniform(-1, 1);
    nn::Conv2d<double> conv = nn::Conv2d<double>::create(ps, "conv", {2, 3, 3, 3, 1, 1}, r);

    auto fragment = [&](Graph<double>& g) {
        Var<double> y = conv.forward(g, g.param(x));
        return g.sum_all(g.mul(y, y));
    };
    auto report = diff::grad_check(ps, fragment, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("grad_check passes a ConvLSTM step at 1e-4") {
    rng::Counter r(22);
    ParamStore<double> ps;
    auto& x = ps.create("x", {1, 2, 4, 4});
    auto& h0 = ps.create("h0", {1, 3, 4, 4});
    auto& c0 = ps.create("c0", {1, 3, 4, 4});
    for (auto* t : {&x, &h0, &c0})
        for (std::int64_t i = 0; i < t->value.numel(); ++i) t->value[i] = r.uniform(-1, 1);
    nn::ConvLstm<double> cell = nn::ConvLstm<double>::create(ps, "cell", 2, 3, 4, r);

    auto fragment = [&](Graph<double>& g) {
        nn::ConvLstmState<double> s{g.param(h0), g.param(c0)};
        auto s2 = cell.step(g, g.param(x), s);
        return g.sum_all(g.mul(s2.hidden, g.add(s2.cell, s2.hidden)));
    };
    auto report = diff::grad_check(ps, fragment, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("grad_check flags a gradient corrupted by 2x with error near 0.5") {
    rng::Counter r(23);
    ParamStore<double> ps;
    auto& p = ps.create("p", {4});
    for (int i = 0; i < 4; ++i) p.value[i] = r.uniform(0.5, 1.5);

    auto fragment = [&](Graph<double>& g) {
        Var<double> v = g.param(p);
        return g.sum_all(g.mul(v, v));
    };
    auto corrupt = [](ParamStore<double>& store) {
        for (auto* q : store.all())
            for (std::int64_t i = 0; i < q->grad.numel(); ++i) q->grad[i] *= 2.0;
    };
    auto report = diff::grad_check(ps, fragment, 1e-4, {1e-3, 1e-5}, corrupt);
    CHECK_FALSE(report.pass);
    CHECK(report.max_rel_err == doctest::Approx(0.5).epsilon(1e-3));
}
