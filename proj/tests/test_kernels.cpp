#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "hvrnn/kernels.hpp"
#include "hvrnn/rng.hpp"

using namespace hvrnn;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, rng::Counter& r, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(r.uniform(lo, hi));
    return v;
}

template <class T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = std::abs(double(a[i]) - double(b[i]));
        double m = std::max({std::abs(double(a[i])), std::abs(double(b[i])), 1.0});
        REQUIRE(d / m <= tol);
    }
}

struct IsaGuard {
    kern::Isa saved;
    IsaGuard() : saved(kern::active_isa()) {}
    ~IsaGuard() { kern::force_isa(saved); }
};

constexpr std::size_t kSizes[] = {1, 3, 7, 8, 9, 31, 64, 257, 4096};

// Runs fn under both ISAs and compares the outputs it writes.
template <class T, class Fn>
void equivalence(double tol, Fn&& fn) {
    if (!kern::cpu_has_avx2()) return;  // nothing to compare on this machine
    IsaGuard guard;
    rng::Counter r(7);
    for (std::size_t n : kSizes) {
        kern::force_isa(kern::Isa::scalar);
        auto ref = fn(n, rng::Counter(r.key() + n));
        kern::force_isa(kern::Isa::avx2);
        auto got = fn(n, rng::Counter(r.key() + n));
        expect_close<T>(ref, got, tol);
    }
}

template <class T>
double map_tol() {
    return std::is_same_v<T, float> ? 2e-6 : 1e-14;
}

template <class T>
double reduce_tol() {
    return std::is_same_v<T, float> ? 2e-5 : 1e-12;
}

}  // namespace

TEST_CASE("isa detection and override") {
    IsaGuard guard;
    kern::force_isa(kern::Isa::scalar);
    CHECK(kern::active_isa() == kern::Isa::scalar);
    if (kern::cpu_has_avx2()) {
        kern::force_isa(kern::Isa::avx2);
        CHECK(kern::active_isa() == kern::Isa::avx2);
    }
    CHECK(std::string(kern::isa_name(kern::Isa::scalar)) == "scalar");
    CHECK(std::string(kern::isa_name(kern::Isa::avx2)) == "avx2");
}

TEST_CASE_TEMPLATE("elementwise maps match across isas", T, float, double) {
    equivalence<T>(map_tol<T>(), [](std::size_t n, rng::Counter r) {
        auto a = random_vec<T>(n, r);
        auto b = random_vec<T>(n, r);
        std::vector<T> out(n);
        kern::add(a.data(), b.data(), out.data(), n);
        kern::sub(out.data(), b.data(), out.data(), n);
        kern::mul(out.data(), a.data(), out.data(), n);
        kern::affine(out.data(), T(1.5), T(-0.25), out.data(), n);
        kern::axpy(T(0.75), a.data(), out.data(), n);
        kern::mul_acc(a.data(), b.data(), out.data(), n);
        kern::relu(out.data(), out.data(), n);
        return out;
    });
}

TEST_CASE_TEMPLATE("relu backward matches across isas", T, float, double) {
    equivalence<T>(map_tol<T>(), [](std::size_t n, rng::Counter r) {
        auto x = random_vec<T>(n, r);
        auto gy = random_vec<T>(n, r);
        auto gx = random_vec<T>(n, r);
        kern::relu_bwd(x.data(), gy.data(), gx.data(), n);
        return gx;
    });
}

TEST_CASE_TEMPLATE("reductions match across isas", T, float, double) {
    equivalence<T>(reduce_tol<T>(), [](std::size_t n, rng::Counter r) {
        auto a = random_vec<T>(n, r);
        auto b = random_vec<T>(n, r);
        return std::vector<T>{kern::sum(a.data(), n), kern::dot(a.data(), b.data(), n),
                              kern::sqsum(a.data(), n)};
    });
}

TEST_CASE_TEMPLATE("adam update matches across isas", T, float, double) {
    equivalence<T>(reduce_tol<T>(), [](std::size_t n, rng::Counter r) {
        auto p = random_vec<T>(n, r);
        auto m = random_vec<T>(n, r, -0.1, 0.1);
        auto v = random_vec<T>(n, r, 0.0, 0.1);
        auto g = random_vec<T>(n, r);
        kern::adam_update(p.data(), m.data(), v.data(), g.data(), n, T(0.01), T(0.5), T(0.9),
                          T(1e-8), T(0.5), T(0.19), T(1e-4));
        std::vector<T> out = p;
        out.insert(out.end(), m.begin(), m.end());
        out.insert(out.end(), v.begin(), v.end());
        return out;
    });
}

namespace {

struct ConvCase {
    kern::ConvDims d;
};

std::vector<ConvCase> conv_cases() {
    std::vector<ConvCase> cases;
    auto mk = [](std::int64_t b, std::int64_t ci, std::int64_t co, std::int64_t h, std::int64_t w,
                 int k, int s, int p) {
        kern::ConvDims d;
        d.batch = b; d.cin = ci; d.cout = co; d.hin = h; d.win = w;
        d.kh = k; d.kw = k; d.stride = s; d.pad = p;
        d.hout = (h + 2 * p - k) / s + 1;
        d.wout = (w + 2 * p - k) / s + 1;
        return ConvCase{d};
    };
    cases.push_back(mk(2, 3, 4, 8, 8, 3, 1, 1));
    cases.push_back(mk(1, 1, 1, 5, 7, 3, 1, 1));
    cases.push_back(mk(2, 4, 2, 9, 9, 1, 1, 0));
    cases.push_back(mk(1, 2, 3, 16, 16, 3, 1, 1));
    cases.push_back(mk(1, 2, 2, 4, 4, 4, 2, 1));
    cases.push_back(mk(1, 1, 2, 1, 1, 3, 1, 1));
    return cases;
}

}  // namespace

TEST_CASE_TEMPLATE("conv kernels match across isas", T, float, double) {
    if (!kern::cpu_has_avx2()) return;
    IsaGuard guard;
    for (const auto& c : conv_cases()) {
        const auto& d = c.d;
        rng::Counter r(11 + d.cin + d.kh);
        std::size_t xs = std::size_t(d.batch * d.cin * d.hin * d.win);
        std::size_t ws = std::size_t(d.cout * d.cin * d.kh * d.kw);
        std::size_t ys = std::size_t(d.batch * d.cout * d.hout * d.wout);
        auto x = random_vec<T>(xs, r);
        auto w = random_vec<T>(ws, r);
        auto b = random_vec<T>(std::size_t(d.cout), r);
        auto gy = random_vec<T>(ys, r);

        auto run = [&] {
            std::vector<T> y(ys), gx(xs, T(0.5)), gw(ws, T(0.25)), gb(std::size_t(d.cout), T(0));
            kern::conv2d_fwd(x.data(), w.data(), b.data(), y.data(), d);
            kern::conv2d_bwd_input(gy.data(), w.data(), gx.data(), d);
            kern::conv2d_bwd_weight(x.data(), gy.data(), gw.data(), gb.data(), d);
            std::vector<T> out = y;
            out.insert(out.end(), gx.begin(), gx.end());
            out.insert(out.end(), gw.begin(), gw.end());
            out.insert(out.end(), gb.begin(), gb.end());
            return out;
        };
        kern::force_isa(kern::Isa::scalar);
        auto ref = run();
        kern::force_isa(kern::Isa::avx2);
        auto got = run();
        expect_close<T>(ref, got, reduce_tol<T>());
    }
}

TEST_CASE("conv forward against direct summation") {
    // 3x3 ones kernel over 3x3 ones image, pad 1: centre sees 9 taps,
    // edges 6, corners 4.
    kern::ConvDims d;
    d.batch = 1; d.cin = 1; d.cout = 1; d.hin = 3; d.win = 3;
    d.kh = 3; d.kw = 3; d.stride = 1; d.pad = 1; d.hout = 3; d.wout = 3;
    std::vector<float> x(9, 1.0f), w(9, 1.0f), y(9);
    kern::conv2d_fwd(x.data(), w.data(), static_cast<const float*>(nullptr), y.data(), d);
    std::vector<float> want = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (int i = 0; i < 9; ++i) CHECK(y[std::size_t(i)] == doctest::Approx(want[std::size_t(i)]));
}

TEST_CASE_TEMPLATE("gemm kernels match across isas", T, float, double) {
    if (!kern::cpu_has_avx2()) return;
    IsaGuard guard;
    rng::Counter seeds(77);
    struct Dims { std::size_t m, k, n; };
    for (auto [m, k, n] : {Dims{1, 1, 1}, Dims{3, 5, 7}, Dims{4, 9, 16}, Dims{5, 18, 33},
                           Dims{16, 36, 64}}) {
        auto a = random_vec<T>(m * k, seeds, -1, 1);
        auto b = random_vec<T>(k * n, seeds, -1, 1);
        auto c0 = random_vec<T>(m * n, seeds, -1, 1);
        auto at = random_vec<T>(m * n, seeds, -1, 1);
        auto bt = random_vec<T>(k * n, seeds, -1, 1);
        auto ct0 = random_vec<T>(m * k, seeds, -1, 1);

        auto run = [&] {
            std::vector<T> c = c0, ct = ct0;
            kern::gemm_acc(a.data(), b.data(), c.data(), m, k, n);
            kern::gemm_abt_acc(at.data(), bt.data(), ct.data(), m, n, k);
            c.insert(c.end(), ct.begin(), ct.end());
            return c;
        };
        kern::force_isa(kern::Isa::scalar);
        auto ref = run();
        kern::force_isa(kern::Isa::avx2);
        auto got = run();
        expect_close<T>(ref, got, reduce_tol<T>());
    }
}
