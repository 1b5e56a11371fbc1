#pragma once

// Thin gemm dispatch over OpenBLAS plus the matmul tensor op.

#include <cblas.h>

#include "advaug/tensor.hpp"

namespace advaug {
namespace detail {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw Error("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  const int m = int(a.dim(0)), k = int(a.dim(1)), n = int(b.dim(1));
  Tensor<T> out = Tensor<T>::zeros({std::size_t(m), std::size_t(n)});
  detail::gemm(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(),
               n, T(0), out.data().data(), n);

  if (detail::grad_flows(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    tape->record([an, bn, on, m, n, k]() {
      if (an->requires_grad) {
        an->ensure_grad();
        // grad_a += grad_out * b^T
        detail::gemm(false, true, m, k, n, T(1), on->grad.data(), n,
                     bn->value.data(), n, T(1), an->grad.data(), k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // grad_b += a^T * grad_out
        detail::gemm(true, false, k, n, m, T(1), an->value.data(), k,
                     on->grad.data(), n, T(1), bn->grad.data(), n);
      }
    });
  }
  return out;
}

}  // namespace advaug
