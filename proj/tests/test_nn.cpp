#include <doctest.h>

#include <cmath>

#include "hvrnn/gradcheck.hpp"
#include "hvrnn/nn.hpp"

using namespace hvrnn;
using diff::Graph;
using diff::ParamStore;
using diff::Var;

namespace {

template <class T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    rng::Counter r(seed);
    Tensor<T> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(r.uniform(lo, hi));
    return t;
}

// Scalar-loop convolution oracle, independent of the kernel module.
template <class T>
Tensor<T> conv_ref(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    std::int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor<T> y({B, Co, Ho, Wo});
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = b.numel() ? double(b[co]) : 0.0;
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t u = 0; u < kh; ++u)
                            for (std::int64_t v = 0; v < kw; ++v) {
                                std::int64_t ih = oh * stride + u - pad;
                                std::int64_t iw = ow * stride + v - pad;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += double(x.at4(bb, ci, ih, iw)) * double(w.at4(co, ci, u, v));
                            }
                    y.at4(bb, co, oh, ow) = static_cast<T>(acc);
                }
    return y;
}

// Scatter-add transposed-convolution oracle.
template <class T>
Tensor<T> tconv_ref(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    std::int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    std::int64_t Ho = (H - 1) * stride - 2 * pad + kh;
    std::int64_t Wo = (W - 1) * stride - 2 * pad + kw;
    Tensor<T> y({B, Co, Ho, Wo});
    for (std::int64_t bb = 0; bb < B; ++bb) {
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t i = 0; i < Ho * Wo; ++i)
                y[((bb * Co + co) * Ho * Wo) + i] = b.numel() ? b[co] : T(0);
        for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t ih = 0; ih < H; ++ih)
                for (std::int64_t iw = 0; iw < W; ++iw)
                    for (std::int64_t co = 0; co < Co; ++co)
                        for (std::int64_t u = 0; u < kh; ++u)
                            for (std::int64_t v = 0; v < kw; ++v) {
                                std::int64_t oh = ih * stride + u - pad;
                                std::int64_t ow = iw * stride + v - pad;
                                if (oh < 0 || oh >= Ho || ow < 0 || ow >= Wo) continue;
                                y.at4(bb, co, oh, ow) += x.at4(bb, ci, ih, iw) * w.at4(ci, co, u, v);
                            }
    }
    return y;
}

}  // namespace

TEST_CASE("conv2d: ones kernel taps 9/6/4 at centre/edge/corner") {
    ParamStore<float> ps;
    rng::Counter r(1);
    auto conv = nn::Conv2d<float>::create(ps, "c", {1, 1, 3, 3, 1, 1}, r);
    for (int i = 0; i < 9; ++i) conv.w->value[i] = 1.0f;
    conv.b->value[0] = 0.0f;
    Graph<float> g;
    Var<float> y = conv.forward(g, g.leaf(Tensor<float>::full({1, 1, 3, 3}, 1.0f)));
    std::vector<float> want = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (int i = 0; i < 9; ++i) CHECK(y.val()[i] == doctest::Approx(want[std::size_t(i)]));
}

TEST_CASE("conv2d: 1x1 identity kernel passes the input through") {
    ParamStore<float> ps;
    rng::Counter r(2);
    auto conv = nn::Conv2d<float>::create(ps, "c", {1, 1, 1, 1, 1, 0}, r);
    conv.w->value[0] = 1.0f;
    conv.b->value[0] = 0.0f;
    Tensor<float> x = random_tensor<float>({2, 1, 4, 4}, 3);
    Graph<float> g;
    Var<float> y = conv.forward(g, g.leaf(x));
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.val()[i] == x[i]);
}

TEST_CASE("conv2d: zero kernel with bias b maps everything to b") {
    ParamStore<float> ps;
    rng::Counter r(3);
    auto conv = nn::Conv2d<float>::create(ps, "c", {2, 3, 3, 3, 1, 1}, r);
    for (std::int64_t i = 0; i < conv.w->value.numel(); ++i) conv.w->value[i] = 0.0f;
    conv.b->value = Tensor<float>::from({3}, {0.5f, -1.5f, 2.0f});
    Graph<float> g;
    Var<float> y = conv.forward(g, g.leaf(random_tensor<float>({1, 2, 5, 5}, 4)));
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < 25; ++i) CHECK(y.val()[c * 25 + i] == conv.b->value[c]);
}

TEST_CASE("conv2d: channel mismatch and degenerate output are contract violations") {
    ParamStore<float> ps;
    rng::Counter r(5);
    auto conv = nn::Conv2d<float>::create(ps, "c", {2, 3, 3, 3, 1, 0}, r);
    Graph<float> g;
    CHECK_THROWS_AS(conv.forward(g, g.leaf(Tensor<float>({1, 4, 5, 5}))), ContractViolation);
    CHECK_THROWS_AS(conv.forward(g, g.leaf(Tensor<float>({1, 2, 2, 2}))), ContractViolation);
}

TEST_CASE("conv2d matches the scalar oracle on random instances") {
    rng::Counter seeds(6);
    for (int trial = 0; trial < 4; ++trial) {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto conv = nn::Conv2d<double>::create(ps, "c", {3, 2, 3, 3, 1, 1}, r);
        Tensor<double> x = random_tensor<double>({2, 3, 6, 6}, seeds.next_u64());
        Graph<double> g;
        Var<double> y = conv.forward(g, g.leaf(x));
        Tensor<double> want = conv_ref(x, conv.w->value, conv.b->value, 1, 1);
        for (std::int64_t i = 0; i < want.numel(); ++i)
            CHECK(y.val()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("transposed conv: 1x1 input value v spreads to a 2x2 output of v") {
    ParamStore<float> ps;
    rng::Counter r(7);
    auto up = nn::ConvTranspose2d<float>::create(ps, "u", 1, 1, r);
    for (std::int64_t i = 0; i < up.w->value.numel(); ++i) up.w->value[i] = 1.0f;
    up.b->value[0] = 0.0f;
    Graph<float> g;
    Var<float> y = up.forward(g, g.leaf(Tensor<float>::full({1, 1, 1, 1}, 3.25f)));
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(y.val()[i] == doctest::Approx(3.25f));
}

TEST_CASE("transposed conv: zero input gives bias, geometry upscales 2x") {
    ParamStore<float> ps;
    rng::Counter r(8);
    auto up = nn::ConvTranspose2d<float>::create(ps, "u", 3, 2, r);
    up.b->value = Tensor<float>::from({2}, {0.75f, -0.25f});
    Graph<float> g;
    Var<float> y = up.forward(g, g.leaf(Tensor<float>({2, 3, 2, 2})));
    REQUIRE(y.shape() == Shape{2, 2, 4, 4});
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t c = 0; c < 2; ++c)
            for (std::int64_t i = 0; i < 16; ++i) CHECK(y.val()[(b * 2 + c) * 16 + i] == up.b->value[c]);
}

TEST_CASE("transposed conv matches the scatter-add oracle on random instances") {
    rng::Counter seeds(9);
    for (int trial = 0; trial < 4; ++trial) {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto up = nn::ConvTranspose2d<double>::create(ps, "u", 2, 3, r);
        Tensor<double> x = random_tensor<double>({2, 2, 3, 3}, seeds.next_u64());
        Graph<double> g;
        Var<double> y = up.forward(g, g.leaf(x));
        Tensor<double> want = tconv_ref(x, up.w->value, up.b->value, 2, 1);
        REQUIRE(y.shape() == want.shape());
        for (std::int64_t i = 0; i < want.numel(); ++i)
            CHECK(y.val()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv/transposed-conv adjointness: <conv(x), y> == <x, tconv(y)>") {
    rng::Counter seeds(10);
    for (auto [k, s, p] : {std::tuple{3, 1, 1}, std::tuple{4, 2, 1}}) {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        int ci = 2, co = 3, H = 8;
        auto convw = nn::Conv2d<double>::create(ps, "c", {ci, co, k, k, s, p}, r);
        for (std::int64_t i = 0; i < convw.b->value.numel(); ++i) convw.b->value[i] = 0.0;
        Tensor<double> x = random_tensor<double>({1, ci, H, H}, seeds.next_u64());
        Graph<double> g;
        Var<double> cx = convw.forward(g, g.leaf(x));
        Tensor<double> y = random_tensor<double>(cx.shape(), seeds.next_u64());
        // Transposed conv sharing the conv weight memory maps co -> ci.
        Tensor<double> zero_b({ci});
        Var<double> ty = g.conv_transpose2d(g.leaf(y), g.leaf(convw.w->value), g.leaf(zero_b), s, p);
        REQUIRE(ty.shape() == x.shape());
        double lhs = 0, rhs = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) lhs += double(cx.val()[i]) * double(y[i]);
        for (std::int64_t i = 0; i < x.numel(); ++i) rhs += double(x[i]) * double(ty.val()[i]);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("max pool: window max, constants, scalar oracle, odd size rejected") {
    Graph<float> g;
    Var<float> y = g.max_pool2x2(g.leaf(Tensor<float>::from({1, 1, 2, 2}, {1, 2, 3, 4})));
    CHECK(y.val()[0] == 4.0f);

    Var<float> c = g.max_pool2x2(g.leaf(Tensor<float>::full({2, 3, 4, 4}, 0.7f)));
    REQUIRE(c.shape() == Shape{2, 3, 2, 2});
    for (std::int64_t i = 0; i < c.val().numel(); ++i) CHECK(c.val()[i] == 0.7f);

    Tensor<float> x = random_tensor<float>({2, 2, 4, 4}, 11);
    Var<float> m = g.max_pool2x2(g.leaf(x));
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t ch = 0; ch < 2; ++ch)
            for (std::int64_t oh = 0; oh < 2; ++oh)
                for (std::int64_t ow = 0; ow < 2; ++ow) {
                    float want = std::max(std::max(x.at4(b, ch, 2 * oh, 2 * ow), x.at4(b, ch, 2 * oh, 2 * ow + 1)),
                                          std::max(x.at4(b, ch, 2 * oh + 1, 2 * ow), x.at4(b, ch, 2 * oh + 1, 2 * ow + 1)));
                    CHECK(m.val().at4(b, ch, oh, ow) == want);
                }

    CHECK_THROWS_AS(g.max_pool2x2(g.leaf(Tensor<float>({1, 1, 3, 3}))), ContractViolation);
}

TEST_CASE("max pool ties route gradient to the first window element in scan order") {
    ParamStore<double> ps;
    auto& p = ps.create("p", {1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) p.value[i] = 0.5;  // all tied
    Graph<double> g;
    g.backward(g.sum_all(g.max_pool2x2(g.param(p))));
    CHECK(p.grad[0] == 1.0);
    CHECK(p.grad[1] == 0.0);
    CHECK(p.grad[2] == 0.0);
    CHECK(p.grad[3] == 0.0);
}

TEST_CASE("group norm: constant input normalizes to zero; gamma=0 gives beta") {
    ParamStore<float> ps;
    auto gn = nn::GroupNorm<float>::create(ps, "gn", 4, 2);
    Graph<float> g;
    Var<float> y = gn.forward(g, g.leaf(Tensor<float>::full({2, 4, 3, 3}, 5.0f)));
    for (std::int64_t i = 0; i < y.val().numel(); ++i) CHECK(y.val()[i] == doctest::Approx(0.0f));

    for (int c = 0; c < 4; ++c) {
        gn.gamma->value[c] = 0.0f;
        gn.beta->value[c] = 1.25f;
    }
    Var<float> z = gn.forward(g, g.leaf(random_tensor<float>({1, 4, 3, 3}, 12)));
    for (std::int64_t i = 0; i < z.val().numel(); ++i) CHECK(z.val()[i] == 1.25f);
}

TEST_CASE("group norm: per-group statistics are mean 0 variance 1 before affine") {
    ParamStore<double> ps;
    auto gn = nn::GroupNorm<double>::create(ps, "gn", 6, 3);
    Tensor<double> x = random_tensor<double>({2, 6, 4, 4}, 13);
    Graph<double> g;
    Var<double> y = gn.forward(g, g.leaf(x));
    std::int64_t cg = 2, hw = 16, m = cg * hw;
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t grp = 0; grp < 3; ++grp) {
            double mean = 0, var = 0;
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < hw; ++i)
                    mean += y.val()[((b * 6 + grp * cg + c) * hw) + i];
            mean /= double(m);
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < hw; ++i) {
                    double d = y.val()[((b * 6 + grp * cg + c) * hw) + i] - mean;
                    var += d * d;
                }
            var /= double(m);
            CHECK(std::abs(mean) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-4);
        }
}

TEST_CASE("group norm is invariant to per-group shift and positive scale") {
    ParamStore<double> ps;
    auto gn = nn::GroupNorm<double>::create(ps, "gn", 4, 2);
    Tensor<double> x = random_tensor<double>({1, 4, 4, 4}, 14, -2.0, 2.0);
    Tensor<double> x2 = x;
    for (std::int64_t i = 0; i < x2.numel(); ++i) x2[i] = 1.7 * x2[i] + 0.4;
    Graph<double> g;
    Var<double> a = gn.forward(g, g.leaf(x));
    Var<double> b = gn.forward(g, g.leaf(x2));
    for (std::int64_t i = 0; i < a.val().numel(); ++i)
        CHECK(a.val()[i] == doctest::Approx(b.val()[i]).epsilon(1e-5));
}

TEST_CASE("group norm rejects a group count that does not divide channels") {
    ParamStore<float> ps;
    auto gn = nn::GroupNorm<float>::create(ps, "gn", 4, 2);
    Graph<float> g;
    Var<float> gamma = g.param(*gn.gamma), beta = g.param(*gn.beta);
    CHECK_THROWS_AS(g.group_norm(g.leaf(Tensor<float>({1, 4, 2, 2})), gamma, beta, 3, 1e-5f),
                    ContractViolation);
}

TEST_CASE("residual block: zero weights with matching channels is the identity") {
    ParamStore<float> ps;
    rng::Counter r(15);
    auto block = nn::ResidualBlock<float>::create(ps, "rb", 3, 3, 4, r);
    for (auto* p : ps.all())
        if (p->name.find("gamma") == std::string::npos)
            for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = 0.0f;
    Tensor<float> x = random_tensor<float>({2, 3, 4, 4}, 16);
    Graph<float> g;
    Var<float> y = block.forward(g, g.leaf(x));
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.val()[i] == x[i]);
}

TEST_CASE("residual block: channel-changing shape and compositional oracle") {
    ParamStore<double> ps;
    rng::Counter r(17);
    auto block = nn::ResidualBlock<double>::create(ps, "rb", 2, 4, 4, r);
    Tensor<double> x = random_tensor<double>({1, 2, 4, 4}, 18);
    Graph<double> g;
    Var<double> y = block.forward(g, g.leaf(x));
    REQUIRE(y.shape() == Shape{1, 4, 4, 4});

    // Compose the same computation from already-verified primitive calls.
    auto relu_ref = [](Tensor<double> t) {
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std::max(0.0, t[i]);
        return t;
    };
    auto gn_ref = [&](const Tensor<double>& t, const nn::GroupNorm<double>& gn) {
        Graph<double> g2;
        return gn.forward(g2, g2.leaf(t)).val();
    };
    Tensor<double> h = conv_ref(relu_ref(x), block.conv1.w->value, block.conv1.b->value, 1, 1);
    h = gn_ref(h, block.gn1);
    h = conv_ref(relu_ref(h), block.conv2.w->value, block.conv2.b->value, 1, 1);
    h = gn_ref(h, block.gn2);
    Tensor<double> proj = conv_ref(x, block.proj.w->value, block.proj.b->value, 1, 0);
    for (std::int64_t i = 0; i < h.numel(); ++i)
        CHECK(y.val()[i] == doctest::Approx(proj[i] + h[i]).epsilon(1e-10));
}

TEST_CASE("convlstm: zero weights and state give zero cell and hidden") {
    ParamStore<float> ps;
    rng::Counter r(19);
    auto cell = nn::ConvLstm<float>::create(ps, "cl", 2, 3, 4, r);
    for (auto* p : ps.all())
        if (p->name.find("gamma") == std::string::npos)
            for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = 0.0f;
    Graph<float> g;
    nn::ConvLstmState<float> s{g.leaf(Tensor<float>({1, 3, 4, 4})), g.leaf(Tensor<float>({1, 3, 4, 4}))};
    auto s2 = cell.step(g, g.leaf(random_tensor<float>({1, 2, 4, 4}, 20)), s);
    for (std::int64_t i = 0; i < s2.cell.val().numel(); ++i) {
        CHECK(s2.cell.val()[i] == 0.0f);
        CHECK(s2.hidden.val()[i] == 0.0f);
    }
}

TEST_CASE("convlstm: saturating forget gate passes the cell through") {
    ParamStore<float> ps;
    rng::Counter r(21);
    int hidden = 2;
    auto cell = nn::ConvLstm<float>::create(ps, "cl", 1, hidden, 4, r);
    for (auto* p : ps.all())
        for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = 0.0f;
    // With zero conv weights the pre-gate activations equal GroupNorm's beta;
    // saturate f at 1 and i at 0 through it.
    for (int c = 0; c < hidden; ++c) {
        cell.gn.beta->value[c] = -30.0f;           // i -> 0
        cell.gn.beta->value[hidden + c] = 30.0f;   // f -> 1
    }
    Tensor<float> c0 = random_tensor<float>({1, hidden, 4, 4}, 22);
    Graph<float> g;
    nn::ConvLstmState<float> s{g.leaf(Tensor<float>({1, hidden, 4, 4})), g.leaf(c0)};
    auto s2 = cell.step(g, g.leaf(random_tensor<float>({1, 1, 4, 4}, 23)), s);
    for (std::int64_t i = 0; i < c0.numel(); ++i)
        CHECK(s2.cell.val()[i] == doctest::Approx(c0[i]).epsilon(1e-5));
}

TEST_CASE("convlstm matches a scalar loop reference on a random instance") {
    ParamStore<double> ps;
    rng::Counter r(24);
    int in_ch = 2, hidden = 2, H = 3;
    // Tiny spatial size with 3x3 kernels still exercises the padding paths.
    auto cell = nn::ConvLstm<double>::create(ps, "cl", in_ch, hidden, H, r);
    Tensor<double> x = random_tensor<double>({1, in_ch, H, H}, 25);
    Tensor<double> h0 = random_tensor<double>({1, hidden, H, H}, 26);
    Tensor<double> c0 = random_tensor<double>({1, hidden, H, H}, 27);

    Graph<double> g;
    nn::ConvLstmState<double> s{g.leaf(h0), g.leaf(c0)};
    auto s2 = cell.step(g, g.leaf(x), s);

    // Reference: concat -> conv -> group norm -> gates, all scalar loops.
    Tensor<double> xh({1, in_ch + hidden, H, H});
    std::copy(x.data(), x.data() + x.numel(), xh.data());
    std::copy(h0.data(), h0.data() + h0.numel(), xh.data() + x.numel());
    Tensor<double> pre = conv_ref(xh, cell.gates.w->value, cell.gates.b->value, 1, 1);
    {  // group norm reference
        int C = 4 * hidden, G = cell.gn.groups;
        std::int64_t cg = C / G, hw = H * H, m = cg * hw;
        for (int grp = 0; grp < G; ++grp) {
            double mean = 0, var = 0;
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < hw; ++i) mean += pre[(grp * cg + c) * hw + i];
            mean /= double(m);
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < hw; ++i) {
                    double d = pre[(grp * cg + c) * hw + i] - mean;
                    var += d * d;
                }
            var /= double(m);
            double inv = 1.0 / std::sqrt(var + 1e-5);
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < hw; ++i) {
                    std::int64_t ch = grp * cg + c;
                    pre[ch * hw + i] = cell.gn.gamma->value[ch] * (pre[ch * hw + i] - mean) * inv +
                                       cell.gn.beta->value[ch];
                }
        }
    }
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::int64_t hw = H * H;
    for (std::int64_t c = 0; c < hidden; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            double gi = sig(pre[(0 * hidden + c) * hw + i]);
            double gf = sig(pre[(1 * hidden + c) * hw + i]);
            double gg = std::tanh(pre[(2 * hidden + c) * hw + i]);
            double go = sig(pre[(3 * hidden + c) * hw + i]);
            double cc = gf * c0[c * hw + i] + gi * gg;
            double hh = go * std::tanh(cc);
            CHECK(s2.cell.val()[c * hw + i] == doctest::Approx(cc).epsilon(1e-10));
            CHECK(s2.hidden.val()[c * hw + i] == doctest::Approx(hh).epsilon(1e-10));
        }
}

TEST_CASE("convlstm iterated steps are deterministic") {
    ParamStore<float> ps;
    rng::Counter r(28);
    auto cell = nn::ConvLstm<float>::create(ps, "cl", 1, 2, 4, r);
    Tensor<float> x = random_tensor<float>({1, 1, 4, 4}, 29);
    auto run = [&] {
        Graph<float> g;
        nn::ConvLstmState<float> s{g.leaf(Tensor<float>({1, 2, 4, 4})), g.leaf(Tensor<float>({1, 2, 4, 4}))};
        for (int t = 0; t < 5; ++t) s = cell.step(g, g.leaf(x), s);
        return s.hidden.val();
    };
    Tensor<float> a = run(), b = run();
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("layer zoo gradients match finite differences at 1e-4 (64-bit)") {
    rng::Counter seeds(31);

    SUBCASE("conv2d") {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto& x = ps.create("x", {2, 2, 4, 4});
        for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = r.uniform(-1, 1);
        auto conv = nn::Conv2d<double>::create(ps, "c", {2, 3, 3, 3, 1, 1}, r);
        auto report = diff::grad_check(ps, [&](Graph<double>& g) {
            Var<double> y = conv.forward(g, g.param(x));
            return g.sum_all(g.mul(y, y));
        }, 1e-4);
        CHECK(report.pass);
    }

    SUBCASE("transposed conv") {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto& x = ps.create("x", {1, 2, 3, 3});
        for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = r.uniform(-1, 1);
        auto up = nn::ConvTranspose2d<double>::create(ps, "u", 2, 2, r);
        auto report = diff::grad_check(ps, [&](Graph<double>& g) {
            Var<double> y = up.forward(g, g.param(x));
            return g.sum_all(g.mul(y, y));
        }, 1e-4);
        CHECK(report.pass);
    }

    SUBCASE("max pool and global average pool") {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto& x = ps.create("x", {2, 2, 4, 4});
        for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = r.uniform(-1, 1);
        auto report = diff::grad_check(ps, [&](Graph<double>& g) {
            Var<double> y = g.max_pool2x2(g.param(x));
            return g.sum_all(g.mul(y, g.upsample_nearest(g.global_avg_pool(y), 2)));
        }, 1e-4);
        CHECK(report.pass);
    }

    SUBCASE("group norm") {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto& x = ps.create("x", {2, 4, 3, 3});
        for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = r.uniform(-1, 1);
        auto gn = nn::GroupNorm<double>::create(ps, "gn", 4, 2);
        for (int c = 0; c < 4; ++c) gn.gamma->value[c] = r.uniform(0.5, 1.5);
        auto report = diff::grad_check(ps, [&](Graph<double>& g) {
            Var<double> y = gn.forward(g, g.param(x));
            return g.sum_all(g.mul(y, y));
        }, 1e-4);
        CHECK(report.pass);
    }

    SUBCASE("residual block") {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto& x = ps.create("x", {1, 2, 4, 4});
        for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = r.uniform(-1, 1);
        auto block = nn::ResidualBlock<double>::create(ps, "rb", 2, 3, 4, r);
        auto report = diff::grad_check(ps, [&](Graph<double>& g) {
            Var<double> y = block.forward(g, g.param(x));
            return g.sum_all(g.mul(y, y));
        }, 1e-4);
        CHECK(report.pass);
    }

    SUBCASE("convlstm step") {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto& x = ps.create("x", {1, 2, 3, 3});
        auto& h0 = ps.create("h0", {1, 2, 3, 3});
        auto& c0 = ps.create("c0", {1, 2, 3, 3});
        for (auto* t : {&x, &h0, &c0})
            for (std::int64_t i = 0; i < t->value.numel(); ++i) t->value[i] = r.uniform(-1, 1);
        auto cell = nn::ConvLstm<double>::create(ps, "cl", 2, 2, 3, r);
        auto report = diff::grad_check(ps, [&](Graph<double>& g) {
            nn::ConvLstmState<double> s{g.param(h0), g.param(c0)};
            auto s2 = cell.step(g, g.param(x), s);
            return g.sum_all(g.add(g.mul(s2.hidden, s2.hidden), g.mul(s2.cell, s2.cell)));
        }, 1e-4);
        CHECK(report.pass);
    }

    SUBCASE("upsample, concat, slice, state init net") {
        ParamStore<double> ps;
        rng::Counter r(seeds.next_u64());
        auto& x = ps.create("x", {1, 3, 2, 2});
        for (std::int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = r.uniform(-1, 1);
        auto net = nn::StateInitNet<double>::create(ps, "init", 3, 2, 2, r);
        auto report = diff::grad_check(ps, [&](Graph<double>& g) {
            Var<double> xv = g.param(x);
            auto st = net.forward(g, xv);
            Var<double> u = g.upsample_nearest(st.hidden, 2);
            Var<double> cat = g.concat_ch({u, g.upsample_nearest(st.cell, 2)});
            return g.sum_all(g.mul(g.slice_ch(cat, 1, 3), g.slice_ch(cat, 0, 2)));
        }, 1e-4);
        CHECK(report.pass);
    }
}
