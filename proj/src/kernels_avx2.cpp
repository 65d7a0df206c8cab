// AVX2+FMA kernel variants. This translation unit is the only one compiled
// with -mavx2 -mfma; it is reached solely through the runtime dispatch in
// kernels.cpp after a CPUID check.

#include "kernels_impl.hpp"

#if HVRNN_HAVE_AVX2_KERNELS

#include <immintrin.h>

#include <cmath>
#include <vector>

namespace hvrnn::kern::avx2_impl {

namespace {

// Thin wrappers so the float (8-lane) and double (4-lane) kernels share one
// template body.
template <class T>
struct vec;

template <>
struct vec<float> {
    using reg = __m256;
    static constexpr std::size_t lanes = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg set1(float v) { return _mm256_set1_ps(v); }
    static reg loadu(const float* p) { return _mm256_loadu_ps(p); }
    static void storeu(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
    static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
    static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
    static reg gt_mask(reg a, reg b) { return _mm256_cmp_ps(a, b, _CMP_GT_OQ); }
    static reg masked(reg mask, reg v) { return _mm256_and_ps(mask, v); }
    static float reduce(reg a) {
        __m128 lo = _mm256_castps256_ps128(a);
        __m128 hi = _mm256_extractf128_ps(a, 1);
        lo = _mm_add_ps(lo, hi);
        lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
        lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
        return _mm_cvtss_f32(lo);
    }
};

template <>
struct vec<double> {
    using reg = __m256d;
    static constexpr std::size_t lanes = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg set1(double v) { return _mm256_set1_pd(v); }
    static reg loadu(const double* p) { return _mm256_loadu_pd(p); }
    static void storeu(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
    static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
    static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
    static reg gt_mask(reg a, reg b) { return _mm256_cmp_pd(a, b, _CMP_GT_OQ); }
    static reg masked(reg mask, reg v) { return _mm256_and_pd(mask, v); }
    static double reduce(reg a) {
        __m128d lo = _mm256_castpd256_pd128(a);
        __m128d hi = _mm256_extractf128_pd(a, 1);
        lo = _mm_add_pd(lo, hi);
        lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
        return _mm_cvtsd_f64(lo);
    }
};

}  // namespace

template <class T>
void add(const T* a, const T* b, T* out, std::size_t n) {
    using V = vec<T>;
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes)
        V::storeu(out + i, V::add(V::loadu(a + i), V::loadu(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
    using V = vec<T>;
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes)
        V::storeu(out + i, V::sub(V::loadu(a + i), V::loadu(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
    using V = vec<T>;
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes)
        V::storeu(out + i, V::mul(V::loadu(a + i), V::loadu(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void affine(const T* a, T scale, T shift, T* out, std::size_t n) {
    using V = vec<T>;
    auto vs = V::set1(scale);
    auto vh = V::set1(shift);
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes)
        V::storeu(out + i, V::fma(vs, V::loadu(a + i), vh));
    for (; i < n; ++i) out[i] = scale * a[i] + shift;
}

template <class T>
void axpy(T a, const T* x, T* y, std::size_t n) {
    using V = vec<T>;
    auto va = V::set1(a);
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes)
        V::storeu(y + i, V::fma(va, V::loadu(x + i), V::loadu(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void mul_acc(const T* a, const T* b, T* out, std::size_t n) {
    using V = vec<T>;
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes)
        V::storeu(out + i, V::fma(V::loadu(a + i), V::loadu(b + i), V::loadu(out + i)));
    for (; i < n; ++i) out[i] += a[i] * b[i];
}

template <class T>
void relu(const T* a, T* out, std::size_t n) {
    using V = vec<T>;
    auto z = V::zero();
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes)
        V::storeu(out + i, V::max(V::loadu(a + i), z));
    for (; i < n; ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
}

template <class T>
void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n) {
    using V = vec<T>;
    auto z = V::zero();
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes) {
        auto mask = V::gt_mask(V::loadu(x + i), z);
        V::storeu(gx + i, V::add(V::loadu(gx + i), V::masked(mask, V::loadu(gy + i))));
    }
    for (; i < n; ++i)
        if (x[i] > T(0)) gx[i] += gy[i];
}

template <class T>
T sum(const T* a, std::size_t n) {
    using V = vec<T>;
    auto acc0 = V::zero();
    auto acc1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * V::lanes <= n; i += 2 * V::lanes) {
        acc0 = V::add(acc0, V::loadu(a + i));
        acc1 = V::add(acc1, V::loadu(a + i + V::lanes));
    }
    for (; i + V::lanes <= n; i += V::lanes) acc0 = V::add(acc0, V::loadu(a + i));
    T s = V::reduce(V::add(acc0, acc1));
    for (; i < n; ++i) s += a[i];
    return s;
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    using V = vec<T>;
    auto acc0 = V::zero();
    auto acc1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * V::lanes <= n; i += 2 * V::lanes) {
        acc0 = V::fma(V::loadu(a + i), V::loadu(b + i), acc0);
        acc1 = V::fma(V::loadu(a + i + V::lanes), V::loadu(b + i + V::lanes), acc1);
    }
    for (; i + V::lanes <= n; i += V::lanes) acc0 = V::fma(V::loadu(a + i), V::loadu(b + i), acc0);
    T s = V::reduce(V::add(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
T sqsum(const T* a, std::size_t n) {
    return avx2_impl::dot(a, a, n);
}

// C(m,n) += A(m,k)*B(k,n): 4-row blocks share each B load, two vectors wide.
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    using V = vec<T>;
    constexpr std::size_t L = V::lanes;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::size_t j = 0;
        for (; j + 2 * L <= n; j += 2 * L) {
            typename V::reg acc[4][2];
            for (int r = 0; r < 4; ++r) {
                acc[r][0] = V::loadu(c + (i + std::size_t(r)) * n + j);
                acc[r][1] = V::loadu(c + (i + std::size_t(r)) * n + j + L);
            }
            for (std::size_t p = 0; p < k; ++p) {
                auto b0 = V::loadu(b + p * n + j);
                auto b1 = V::loadu(b + p * n + j + L);
                for (int r = 0; r < 4; ++r) {
                    auto av = V::set1(a[(i + std::size_t(r)) * k + p]);
                    acc[r][0] = V::fma(av, b0, acc[r][0]);
                    acc[r][1] = V::fma(av, b1, acc[r][1]);
                }
            }
            for (int r = 0; r < 4; ++r) {
                V::storeu(c + (i + std::size_t(r)) * n + j, acc[r][0]);
                V::storeu(c + (i + std::size_t(r)) * n + j + L, acc[r][1]);
            }
        }
        for (; j < n; ++j)
            for (int r = 0; r < 4; ++r) {
                T s = c[(i + std::size_t(r)) * n + j];
                for (std::size_t p = 0; p < k; ++p) s += a[(i + std::size_t(r)) * k + p] * b[p * n + j];
                c[(i + std::size_t(r)) * n + j] = s;
            }
    }
    for (; i < m; ++i) {
        std::size_t j = 0;
        for (; j + L <= n; j += L) {
            auto acc = V::loadu(c + i * n + j);
            for (std::size_t p = 0; p < k; ++p)
                acc = V::fma(V::set1(a[i * k + p]), V::loadu(b + p * n + j), acc);
            V::storeu(c + i * n + j, acc);
        }
        for (; j < n; ++j) {
            T s = c[i * n + j];
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    }
}

// C(m,k) += A(m,n)*B(k,n)^T: 2x2 blocks of row dot-products.
template <class T>
void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    using V = vec<T>;
    constexpr std::size_t L = V::lanes;
    std::size_t i = 0;
    for (; i + 2 <= m; i += 2) {
        std::size_t p = 0;
        for (; p + 2 <= k; p += 2) {
            auto s00 = V::zero(), s01 = V::zero(), s10 = V::zero(), s11 = V::zero();
            std::size_t j = 0;
            for (; j + L <= n; j += L) {
                auto a0 = V::loadu(a + i * n + j);
                auto a1 = V::loadu(a + (i + 1) * n + j);
                auto b0 = V::loadu(b + p * n + j);
                auto b1 = V::loadu(b + (p + 1) * n + j);
                s00 = V::fma(a0, b0, s00);
                s01 = V::fma(a0, b1, s01);
                s10 = V::fma(a1, b0, s10);
                s11 = V::fma(a1, b1, s11);
            }
            T t00 = V::reduce(s00), t01 = V::reduce(s01);
            T t10 = V::reduce(s10), t11 = V::reduce(s11);
            for (; j < n; ++j) {
                t00 += a[i * n + j] * b[p * n + j];
                t01 += a[i * n + j] * b[(p + 1) * n + j];
                t10 += a[(i + 1) * n + j] * b[p * n + j];
                t11 += a[(i + 1) * n + j] * b[(p + 1) * n + j];
            }
            c[i * k + p] += t00;
            c[i * k + p + 1] += t01;
            c[(i + 1) * k + p] += t10;
            c[(i + 1) * k + p + 1] += t11;
        }
        for (; p < k; ++p) {
            c[i * k + p] += avx2_impl::dot(a + i * n, b + p * n, n);
            c[(i + 1) * k + p] += avx2_impl::dot(a + (i + 1) * n, b + p * n, n);
        }
    }
    for (; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) c[i * k + p] += avx2_impl::dot(a + i * n, b + p * n, n);
}

template <class T>
void adam_update(T* p, T* m, T* v, const T* g, std::size_t n,
                 T lr, T beta1, T beta2, T eps, T bc1, T bc2, T wd) {
    using V = vec<T>;
    auto vlr = V::set1(lr);
    auto vb1 = V::set1(beta1);
    auto vb2 = V::set1(beta2);
    auto v1mb1 = V::set1(T(1) - beta1);
    auto v1mb2 = V::set1(T(1) - beta2);
    auto veps = V::set1(eps);
    auto vibc1 = V::set1(T(1) / bc1);
    auto vibc2 = V::set1(T(1) / bc2);
    auto vdecay = V::set1(T(1) - lr * wd);
    std::size_t i = 0;
    for (; i + V::lanes <= n; i += V::lanes) {
        auto vp = V::mul(V::loadu(p + i), vdecay);
        auto vg = V::loadu(g + i);
        auto vm = V::fma(vb1, V::loadu(m + i), V::mul(v1mb1, vg));
        auto vv = V::fma(vb2, V::loadu(v + i), V::mul(v1mb2, V::mul(vg, vg)));
        V::storeu(m + i, vm);
        V::storeu(v + i, vv);
        auto mhat = V::mul(vm, vibc1);
        auto vhat = V::mul(vv, vibc2);
        auto denom = V::add(V::sqrt(vhat), veps);
        vp = V::sub(vp, V::div(V::mul(vlr, mhat), denom));
        V::storeu(p + i, vp);
    }
    for (; i < n; ++i) {
        p[i] -= lr * wd * p[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

namespace {

// Row accumulation core shared by the stride-1 convolution paths:
// acc[lo..hi) += wv * src[lo + off .. hi + off).
template <class T>
inline void row_fma(T* acc, const T* src, T wv, std::int64_t lo, std::int64_t hi, std::int64_t off) {
    using V = vec<T>;
    auto vw = V::set1(wv);
    std::int64_t i = lo;
    for (; i + std::int64_t(V::lanes) <= hi; i += V::lanes)
        V::storeu(acc + i, V::fma(vw, V::loadu(src + i + off), V::loadu(acc + i)));
    for (; i < hi; ++i) acc[i] += wv * src[i + off];
}

template <class T>
inline T row_dot(const T* a, const T* b, std::int64_t n) {
    using V = vec<T>;
    auto vacc = V::zero();
    std::int64_t i = 0;
    for (; i + std::int64_t(V::lanes) <= n; i += V::lanes)
        vacc = V::fma(V::loadu(a + i), V::loadu(b + i), vacc);
    T s = V::reduce(vacc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

template <class T>
void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    if (d.stride != 1) {  // only the transposed-conv adjoints use stride 2; keep those scalar
        scalar_impl::conv2d_fwd(x, w, bias, y, d);
        return;
    }
    std::vector<T> acc(static_cast<std::size_t>(d.wout));
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t co = 0; co < d.cout; ++co) {
            const T* wc = w + co * d.cin * d.kh * d.kw;
            for (std::int64_t oh = 0; oh < d.hout; ++oh) {
                T bv = bias ? bias[co] : T(0);
                for (std::int64_t i = 0; i < d.wout; ++i) acc[static_cast<std::size_t>(i)] = bv;
                for (std::int64_t ci = 0; ci < d.cin; ++ci)
                    for (int kh = 0; kh < d.kh; ++kh) {
                        std::int64_t ih = oh + kh - d.pad;
                        if (ih < 0 || ih >= d.hin) continue;
                        const T* xr = x + ((b * d.cin + ci) * d.hin + ih) * d.win;
                        const T* wr = wc + (ci * d.kh + kh) * d.kw;
                        for (int kw = 0; kw < d.kw; ++kw) {
                            std::int64_t off = kw - d.pad;
                            std::int64_t lo = off < 0 ? -off : 0;
                            std::int64_t hi = d.win - off < d.wout ? d.win - off : d.wout;
                            if (lo < hi) row_fma(acc.data(), xr, wr[kw], lo, hi, off);
                        }
                    }
                T* yr = y + ((b * d.cout + co) * d.hout + oh) * d.wout;
                for (std::int64_t i = 0; i < d.wout; ++i) yr[i] = acc[static_cast<std::size_t>(i)];
            }
        }
}

template <class T>
void conv2d_bwd_input(const T* gy, const T* w, T* gx, const ConvDims& d) {
    if (d.stride != 1) {
        scalar_impl::conv2d_bwd_input(gy, w, gx, d);
        return;
    }
    std::vector<T> acc(static_cast<std::size_t>(d.win));
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t ci = 0; ci < d.cin; ++ci)
            for (std::int64_t ih = 0; ih < d.hin; ++ih) {
                for (std::int64_t i = 0; i < d.win; ++i) acc[static_cast<std::size_t>(i)] = T(0);
                for (std::int64_t co = 0; co < d.cout; ++co) {
                    const T* wc = w + (co * d.cin + ci) * d.kh * d.kw;
                    for (int kh = 0; kh < d.kh; ++kh) {
                        std::int64_t oh = ih - kh + d.pad;
                        if (oh < 0 || oh >= d.hout) continue;
                        const T* gr = gy + ((b * d.cout + co) * d.hout + oh) * d.wout;
                        for (int kw = 0; kw < d.kw; ++kw) {
                            // iw = ow + kw - pad  =>  gx[iw] += w * gy[iw - kw + pad]
                            std::int64_t off = d.pad - kw;
                            std::int64_t lo = off < 0 ? -off : 0;
                            std::int64_t hi = d.wout - off < d.win ? d.wout - off : d.win;
                            if (lo < hi) row_fma(acc.data(), gr, wc[kh * d.kw + kw], lo, hi, off);
                        }
                    }
                }
                T* xr = gx + ((b * d.cin + ci) * d.hin + ih) * d.win;
                avx2_impl::add(xr, acc.data(), xr, static_cast<std::size_t>(d.win));
            }
}

template <class T>
void conv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d) {
    if (d.stride != 1) {
        scalar_impl::conv2d_bwd_weight(x, gy, gw, gb, d);
        return;
    }
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t co = 0; co < d.cout; ++co) {
            for (std::int64_t oh = 0; oh < d.hout; ++oh) {
                const T* gr = gy + ((b * d.cout + co) * d.hout + oh) * d.wout;
                if (gb) gb[co] += avx2_impl::sum(gr, static_cast<std::size_t>(d.wout));
                for (std::int64_t ci = 0; ci < d.cin; ++ci)
                    for (int kh = 0; kh < d.kh; ++kh) {
                        std::int64_t ih = oh + kh - d.pad;
                        if (ih < 0 || ih >= d.hin) continue;
                        const T* xr = x + ((b * d.cin + ci) * d.hin + ih) * d.win;
                        T* wr = gw + ((co * d.cin + ci) * d.kh + kh) * d.kw;
                        for (int kw = 0; kw < d.kw; ++kw) {
                            std::int64_t off = kw - d.pad;
                            std::int64_t lo = off < 0 ? -off : 0;
                            std::int64_t hi = d.win - off < d.wout ? d.win - off : d.wout;
                            if (lo < hi) wr[kw] += row_dot(gr + lo, xr + lo + off, hi - lo);
                        }
                    }
            }
        }
}

#define HVRNN_INSTANTIATE_AVX2(T)                                                                \
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
    template void conv2d_bwd_weight<T>(const T*, const T*, T*, T*, const ConvDims&);

HVRNN_INSTANTIATE_AVX2(float)
HVRNN_INSTANTIATE_AVX2(double)

}  // namespace hvrnn::kern::avx2_impl

#endif  // HVRNN_HAVE_AVX2_KERNELS
