#pragma once

#include <cstddef>
#include <cstdint>

namespace hvrnn::kern {

// Numeric inner loops used by the tensor engine. Each operation has a scalar
// reference implementation and an AVX2+FMA variant; the active instruction
// set is selected once at runtime from CPUID (override with force_isa() or
// the HVRNN_KERNEL environment variable, values "scalar" / "avx2").
//
// Scalar and AVX2 variants agree elementwise to within a few ulp; reductions
// may differ slightly more because the vector variants reassociate sums.
// Within one process the selection is fixed, so results are reproducible.

enum class Isa { scalar, avx2 };

Isa active_isa();
void force_isa(Isa isa);  // throws ContractViolation if unsupported on this CPU
const char* isa_name(Isa isa);
bool cpu_has_avx2();

// ---- elementwise maps ----
template <class T> void add(const T* a, const T* b, T* out, std::size_t n);
template <class T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <class T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <class T> void affine(const T* a, T scale, T shift, T* out, std::size_t n);  // out = scale*a + shift
template <class T> void axpy(T a, const T* x, T* y, std::size_t n);                   // y += a*x
template <class T> void mul_acc(const T* a, const T* b, T* out, std::size_t n);       // out += a*b
template <class T> void relu(const T* a, T* out, std::size_t n);
template <class T> void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n);      // gx += gy*(x>0)

// ---- reductions ----
template <class T> T sum(const T* a, std::size_t n);
template <class T> T dot(const T* a, const T* b, std::size_t n);
template <class T> T sqsum(const T* a, std::size_t n);

// ---- small dense matrix kernels (row-major) ----
template <class T> void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                                 std::size_t n);  // C(m,n) += A(m,k) * B(k,n)
template <class T> void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n,
                                     std::size_t k);  // C(m,k) += A(m,n) * B(k,n)^T

// ---- fused Adam update with decoupled weight decay ----
// p -= lr*wd*p; then p -= lr * (m/bc1) / (sqrt(v/bc2) + eps), where m and v
// are the freshly updated biased moments.
template <class T>
void adam_update(T* p, T* m, T* v, const T* g, std::size_t n,
                 T lr, T beta1, T beta2, T eps, T bc1, T bc2, T wd);

// ---- 2-d cross-correlation, NCHW, zero padding ----
struct ConvDims {
    std::int64_t batch = 1;
    std::int64_t cin = 1, cout = 1;
    std::int64_t hin = 1, win = 1;
    std::int64_t hout = 1, wout = 1;
    int kh = 1, kw = 1;
    int stride = 1, pad = 0;
};

// y[b,co,oh,ow] = bias[co] + sum_{ci,kh,kw} x[b,ci,oh*s+kh-p,ow*s+kw-p] * w[co,ci,kh,kw]
// bias may be null. w layout (cout, cin, kh, kw).
template <class T> void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);
// gx += correlation adjoint of gy with w; accumulates into gx.
template <class T> void conv2d_bwd_input(const T* gy, const T* w, T* gx, const ConvDims& d);
// gw += dL/dw, and gb[co] += sum of gy over (b,oh,ow) when gb non-null.
template <class T> void conv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d);

// ---- scalar-only transcendental maps (libm per element; cost is negligible
//      next to the convolutions, so these have no vector variant) ----
template <class T> void exp_map(const T* a, T* out, std::size_t n);
template <class T> void sigmoid_map(const T* a, T* out, std::size_t n);
template <class T> void tanh_map(const T* a, T* out, std::size_t n);

}  // namespace hvrnn::kern
