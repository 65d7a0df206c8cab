// Runtime ISA selection. The choice is made once (CPUID + HVRNN_KERNEL
// override) and is fixed for the lifetime of the process unless a test
// forces it.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "hvrnn/errors.hpp"
#include "kernels_impl.hpp"

namespace hvrnn::kern {

bool cpu_has_avx2() {
#if HVRNN_HAVE_AVX2_KERNELS
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Isa detect_isa() {
    if (const char* env = std::getenv("HVRNN_KERNEL")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2()) throw ContractViolation("HVRNN_KERNEL=avx2 but CPU lacks AVX2/FMA");
            return Isa::avx2;
        }
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& isa_slot() {
    static std::atomic<Isa> isa{detect_isa()};
    return isa;
}

}  // namespace

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
    if (isa == Isa::avx2 && !cpu_has_avx2())
        throw ContractViolation("cannot force avx2 kernels: CPU lacks AVX2/FMA");
    isa_slot().store(isa, std::memory_order_relaxed);
}

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

#if HVRNN_HAVE_AVX2_KERNELS
#define HVRNN_DISPATCH(fn, ...)                                  \
    if (active_isa() == Isa::avx2) return avx2_impl::fn(__VA_ARGS__); \
    return scalar_impl::fn(__VA_ARGS__)
#else
#define HVRNN_DISPATCH(fn, ...) return scalar_impl::fn(__VA_ARGS__)
#endif

template <class T> void add(const T* a, const T* b, T* out, std::size_t n) { HVRNN_DISPATCH(add, a, b, out, n); }
template <class T> void sub(const T* a, const T* b, T* out, std::size_t n) { HVRNN_DISPATCH(sub, a, b, out, n); }
template <class T> void mul(const T* a, const T* b, T* out, std::size_t n) { HVRNN_DISPATCH(mul, a, b, out, n); }
template <class T> void affine(const T* a, T scale, T shift, T* out, std::size_t n) {
    HVRNN_DISPATCH(affine, a, scale, shift, out, n);
}
template <class T> void axpy(T a, const T* x, T* y, std::size_t n) { HVRNN_DISPATCH(axpy, a, x, y, n); }
template <class T> void mul_acc(const T* a, const T* b, T* out, std::size_t n) { HVRNN_DISPATCH(mul_acc, a, b, out, n); }
template <class T> void relu(const T* a, T* out, std::size_t n) { HVRNN_DISPATCH(relu, a, out, n); }
template <class T> void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n) { HVRNN_DISPATCH(relu_bwd, x, gy, gx, n); }
template <class T> T sum(const T* a, std::size_t n) { HVRNN_DISPATCH(sum, a, n); }
template <class T> T dot(const T* a, const T* b, std::size_t n) { HVRNN_DISPATCH(dot, a, b, n); }
template <class T> T sqsum(const T* a, std::size_t n) { HVRNN_DISPATCH(sqsum, a, n); }
template <class T> void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    HVRNN_DISPATCH(gemm_acc, a, b, c, m, k, n);
}
template <class T> void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    HVRNN_DISPATCH(gemm_abt_acc, a, b, c, m, n, k);
}
template <class T>
void adam_update(T* p, T* m, T* v, const T* g, std::size_t n,
                 T lr, T beta1, T beta2, T eps, T bc1, T bc2, T wd) {
    HVRNN_DISPATCH(adam_update, p, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2, wd);
}
namespace {

// Stride-1 convolutions run as im2col + GEMM on the vector path: the matrix
// form turns the short spatial rows into wide inner loops. The scalar direct
// loops remain the semantics of record.

template <class T>
std::vector<T>& scratch(int which) {
    static thread_local std::vector<T> bufs[2];
    return bufs[which];
}

// col is (cin*kh*kw) x (hout*wout) for one batch item.
template <class T>
void im2col(const T* x, T* col, const ConvDims& d) {
    std::size_t n = std::size_t(d.hout * d.wout);
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
        for (int u = 0; u < d.kh; ++u)
            for (int v = 0; v < d.kw; ++v) {
                T* row = col + ((std::size_t(ci) * d.kh + u) * d.kw + v) * n;
                for (std::int64_t oh = 0; oh < d.hout; ++oh) {
                    std::int64_t ih = oh + u - d.pad;
                    T* dst = row + oh * d.wout;
                    if (ih < 0 || ih >= d.hin) {
                        std::fill(dst, dst + d.wout, T(0));
                        continue;
                    }
                    const T* src = x + (ci * d.hin + ih) * d.win;
                    std::int64_t off = v - d.pad;
                    std::int64_t lo = off < 0 ? -off : 0;
                    std::int64_t hi = d.win - off < d.wout ? d.win - off : d.wout;
                    if (lo > 0) std::fill(dst, dst + lo, T(0));
                    if (hi > lo) std::copy(src + lo + off, src + hi + off, dst + lo);
                    if (hi < d.wout) std::fill(dst + (hi < 0 ? 0 : hi), dst + d.wout, T(0));
                }
            }
}

template <class T>
void col2im_add(const T* col, T* x, const ConvDims& d) {
    std::size_t n = std::size_t(d.hout * d.wout);
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
        for (int u = 0; u < d.kh; ++u)
            for (int v = 0; v < d.kw; ++v) {
                const T* row = col + ((std::size_t(ci) * d.kh + u) * d.kw + v) * n;
                for (std::int64_t oh = 0; oh < d.hout; ++oh) {
                    std::int64_t ih = oh + u - d.pad;
                    if (ih < 0 || ih >= d.hin) continue;
                    T* dst = x + (ci * d.hin + ih) * d.win;
                    std::int64_t off = v - d.pad;
                    std::int64_t lo = off < 0 ? -off : 0;
                    std::int64_t hi = d.win - off < d.wout ? d.win - off : d.wout;
                    for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow + off] += row[oh * d.wout + ow];
                }
            }
}

template <class T>
bool use_gemm_path(const ConvDims& d) {
#if HVRNN_HAVE_AVX2_KERNELS
    return active_isa() == Isa::avx2 && d.stride == 1;
#else
    (void)d;
    return false;
#endif
}

}  // namespace

template <class T> void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
#if HVRNN_HAVE_AVX2_KERNELS
    if (use_gemm_path<T>(d)) {
        std::size_t kdim = std::size_t(d.cin) * d.kh * d.kw;
        std::size_t n = std::size_t(d.hout * d.wout);
        auto& col = scratch<T>(0);
        col.resize(kdim * n);
        for (std::int64_t b = 0; b < d.batch; ++b) {
            im2col(x + b * d.cin * d.hin * d.win, col.data(), d);
            T* yb = y + b * d.cout * n;
            for (std::int64_t co = 0; co < d.cout; ++co)
                std::fill(yb + co * n, yb + (co + 1) * n, bias ? bias[co] : T(0));
            avx2_impl::gemm_acc(w, col.data(), yb, std::size_t(d.cout), kdim, n);
        }
        return;
    }
#endif
    HVRNN_DISPATCH(conv2d_fwd, x, w, bias, y, d);
}
template <class T> void conv2d_bwd_input(const T* gy, const T* w, T* gx, const ConvDims& d) {
#if HVRNN_HAVE_AVX2_KERNELS
    if (use_gemm_path<T>(d)) {
        std::size_t kdim = std::size_t(d.cin) * d.kh * d.kw;
        std::size_t n = std::size_t(d.hout * d.wout);
        auto& wt = scratch<T>(0);
        wt.resize(kdim * std::size_t(d.cout));
        for (std::int64_t co = 0; co < d.cout; ++co)
            for (std::size_t p = 0; p < kdim; ++p) wt[p * std::size_t(d.cout) + std::size_t(co)] = w[std::size_t(co) * kdim + p];
        auto& colg = scratch<T>(1);
        colg.resize(kdim * n);
        for (std::int64_t b = 0; b < d.batch; ++b) {
            std::fill(colg.begin(), colg.end(), T(0));
            avx2_impl::gemm_acc(wt.data(), gy + b * d.cout * n, colg.data(), kdim,
                                std::size_t(d.cout), n);
            col2im_add(colg.data(), gx + b * d.cin * d.hin * d.win, d);
        }
        return;
    }
#endif
    HVRNN_DISPATCH(conv2d_bwd_input, gy, w, gx, d);
}
template <class T> void conv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d) {
#if HVRNN_HAVE_AVX2_KERNELS
    if (use_gemm_path<T>(d)) {
        std::size_t kdim = std::size_t(d.cin) * d.kh * d.kw;
        std::size_t n = std::size_t(d.hout * d.wout);
        auto& col = scratch<T>(0);
        col.resize(kdim * n);
        for (std::int64_t b = 0; b < d.batch; ++b) {
            im2col(x + b * d.cin * d.hin * d.win, col.data(), d);
            const T* gyb = gy + b * d.cout * n;
            avx2_impl::gemm_abt_acc(gyb, col.data(), gw, std::size_t(d.cout), n, kdim);
            if (gb)
                for (std::int64_t co = 0; co < d.cout; ++co) gb[co] += avx2_impl::sum(gyb + co * n, n);
        }
        return;
    }
#endif
    HVRNN_DISPATCH(conv2d_bwd_weight, x, gy, gw, gb, d);
}

template <class T>
void exp_map(const T* a, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
}

template <class T>
void sigmoid_map(const T* a, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-a[i]));
}

template <class T>
void tanh_map(const T* a, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
}

#define HVRNN_INSTANTIATE_PUBLIC(T)                                                              \
    template void add<T>(const T*, const T*, T*, std::size_t);                                   \
    template void sub<T>(const T*, const T*, T*, std::size_t);                                   \
    template void mul<T>(const T*, const T*, T*, std::size_t);                                   \
    template void affine<T>(const T*, T, T, T*, std::size_t);                                    \
    template void axpy<T>(T, const T*, T*, std::size_t);                                         \
    template void mul_acc<T>(const T*, const T*, T*, std::size_t);                               \
    template void relu<T>(const T*, T*, std::size_t);                                            \
    template void relu_bwd<T>(const T*, const T*, T*, std::size_t);                              \
    template T sum<T>(const T*, std::size_t);                                                    \
    template T dot<T>(const T*, const T*, std::size_t);                                          \
    template T sqsum<T>(const T*, std::size_t);                                                  \
    template void gemm_acc<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);    \
    template void gemm_abt_acc<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);\
    template void adam_update<T>(T*, T*, T*, const T*, std::size_t, T, T, T, T, T, T, T);        \
    template void conv2d_fwd<T>(const T*, const T*, const T*, T*, const ConvDims&);              \
    template void conv2d_bwd_input<T>(const T*, const T*, T*, const ConvDims&);                  \
    template void conv2d_bwd_weight<T>(const T*, const T*, T*, T*, const ConvDims&);             \
    template void exp_map<T>(const T*, T*, std::size_t);                                         \
    template void sigmoid_map<T>(const T*, T*, std::size_t);                                     \
    template void tanh_map<T>(const T*, T*, std::size_t);

HVRNN_INSTANTIATE_PUBLIC(float)
HVRNN_INSTANTIATE_PUBLIC(double)

}  // namespace hvrnn::kern
