// Scalar reference kernels. These are the semantics of record; the AVX2
// variants are equivalence-tested against them.

#include <cmath>

#include "kernels_impl.hpp"

namespace hvrnn::kern::scalar_impl {

template <class T>
void add(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void affine(const T* a, T scale, T shift, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = scale * a[i] + shift;
}

template <class T>
void axpy(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void mul_acc(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <class T>
void relu(const T* a, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
}

template <class T>
void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] > T(0)) gx[i] += gy[i];
}

template <class T>
T sum(const T* a, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
T sqsum(const T* a, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
    return s;
}

template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            T av = a[i * k + p];
            const T* br = b + p * n;
            T* cr = c + i * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
}

template <class T>
void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T* ar = a + i * n;
            const T* br = b + p * n;
            T s = 0;
            for (std::size_t j = 0; j < n; ++j) s += ar[j] * br[j];
            c[i * k + p] += s;
        }
}

template <class T>
void adam_update(T* p, T* m, T* v, const T* g, std::size_t n,
                 T lr, T beta1, T beta2, T eps, T bc1, T bc2, T wd) {
    for (std::size_t i = 0; i < n; ++i) {
        p[i] -= lr * wd * p[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        T mhat = m[i] / bc1;
        T vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template <class T>
void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t co = 0; co < d.cout; ++co)
            for (std::int64_t oh = 0; oh < d.hout; ++oh)
                for (std::int64_t ow = 0; ow < d.wout; ++ow) {
                    T acc = bias ? bias[co] : T(0);
                    for (std::int64_t ci = 0; ci < d.cin; ++ci)
                        for (int kh = 0; kh < d.kh; ++kh) {
                            std::int64_t ih = oh * d.stride + kh - d.pad;
                            if (ih < 0 || ih >= d.hin) continue;
                            for (int kw = 0; kw < d.kw; ++kw) {
                                std::int64_t iw = ow * d.stride + kw - d.pad;
                                if (iw < 0 || iw >= d.win) continue;
                                acc += x[((b * d.cin + ci) * d.hin + ih) * d.win + iw] *
                                       w[((co * d.cin + ci) * d.kh + kh) * d.kw + kw];
                            }
                        }
                    y[((b * d.cout + co) * d.hout + oh) * d.wout + ow] = acc;
                }
}

template <class T>
void conv2d_bwd_input(const T* gy, const T* w, T* gx, const ConvDims& d) {
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t co = 0; co < d.cout; ++co)
            for (std::int64_t oh = 0; oh < d.hout; ++oh)
                for (std::int64_t ow = 0; ow < d.wout; ++ow) {
                    T g = gy[((b * d.cout + co) * d.hout + oh) * d.wout + ow];
                    for (std::int64_t ci = 0; ci < d.cin; ++ci)
                        for (int kh = 0; kh < d.kh; ++kh) {
                            std::int64_t ih = oh * d.stride + kh - d.pad;
                            if (ih < 0 || ih >= d.hin) continue;
                            for (int kw = 0; kw < d.kw; ++kw) {
                                std::int64_t iw = ow * d.stride + kw - d.pad;
                                if (iw < 0 || iw >= d.win) continue;
                                gx[((b * d.cin + ci) * d.hin + ih) * d.win + iw] +=
                                    g * w[((co * d.cin + ci) * d.kh + kh) * d.kw + kw];
                            }
                        }
                }
}

template <class T>
void conv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d) {
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t co = 0; co < d.cout; ++co)
            for (std::int64_t oh = 0; oh < d.hout; ++oh)
                for (std::int64_t ow = 0; ow < d.wout; ++ow) {
                    T g = gy[((b * d.cout + co) * d.hout + oh) * d.wout + ow];
                    if (gb) gb[co] += g;
                    for (std::int64_t ci = 0; ci < d.cin; ++ci)
                        for (int kh = 0; kh < d.kh; ++kh) {
                            std::int64_t ih = oh * d.stride + kh - d.pad;
                            if (ih < 0 || ih >= d.hin) continue;
                            for (int kw = 0; kw < d.kw; ++kw) {
                                std::int64_t iw = ow * d.stride + kw - d.pad;
                                if (iw < 0 || iw >= d.win) continue;
                                gw[((co * d.cin + ci) * d.kh + kh) * d.kw + kw] +=
                                    g * x[((b * d.cin + ci) * d.hin + ih) * d.win + iw];
                            }
                        }
                }
}

#define HVRNN_INSTANTIATE_SCALAR(T)                                                              \
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

HVRNN_INSTANTIATE_SCALAR(float)
HVRNN_INSTANTIATE_SCALAR(double)

}  // namespace hvrnn::kern::scalar_impl
