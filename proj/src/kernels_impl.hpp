#pragma once

// Internal declarations of the per-ISA kernel variants. The public dispatch
// in kernels.cpp routes to one of these namespaces.

#include "hvrnn/kernels.hpp"

namespace hvrnn::kern::scalar_impl {

template <class T> void add(const T* a, const T* b, T* out, std::size_t n);
template <class T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <class T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <class T> void affine(const T* a, T scale, T shift, T* out, std::size_t n);
template <class T> void axpy(T a, const T* x, T* y, std::size_t n);
template <class T> void mul_acc(const T* a, const T* b, T* out, std::size_t n);
template <class T> void relu(const T* a, T* out, std::size_t n);
template <class T> void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n);
template <class T> T sum(const T* a, std::size_t n);
template <class T> T dot(const T* a, const T* b, std::size_t n);
template <class T> T sqsum(const T* a, std::size_t n);
template <class T> void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
template <class T> void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);
template <class T> void adam_update(T* p, T* m, T* v, const T* g, std::size_t n,
                                    T lr, T beta1, T beta2, T eps, T bc1, T bc2, T wd);
template <class T> void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);
template <class T> void conv2d_bwd_input(const T* gy, const T* w, T* gx, const ConvDims& d);
template <class T> void conv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d);

}  // namespace hvrnn::kern::scalar_impl

#if defined(__x86_64__) || defined(_M_X64)
#define HVRNN_HAVE_AVX2_KERNELS 1
#else
#define HVRNN_HAVE_AVX2_KERNELS 0
#endif

#if HVRNN_HAVE_AVX2_KERNELS
namespace hvrnn::kern::avx2_impl {

template <class T> void add(const T* a, const T* b, T* out, std::size_t n);
template <class T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <class T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <class T> void affine(const T* a, T scale, T shift, T* out, std::size_t n);
template <class T> void axpy(T a, const T* x, T* y, std::size_t n);
template <class T> void mul_acc(const T* a, const T* b, T* out, std::size_t n);
template <class T> void relu(const T* a, T* out, std::size_t n);
template <class T> void relu_bwd(const T* x, const T* gy, T* gx, std::size_t n);
template <class T> T sum(const T* a, std::size_t n);
template <class T> T dot(const T* a, const T* b, std::size_t n);
template <class T> T sqsum(const T* a, std::size_t n);
template <class T> void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
template <class T> void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);
template <class T> void adam_update(T* p, T* m, T* v, const T* g, std::size_t n,
                                    T lr, T beta1, T beta2, T eps, T bc1, T bc2, T wd);
template <class T> void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);
template <class T> void conv2d_bwd_input(const T* gy, const T* w, T* gx, const ConvDims& d);
template <class T> void conv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d);

}  // namespace hvrnn::kern::avx2_impl
#endif
