#pragma once

#include "cfp/tensor.hpp"

namespace cfp {

// Dense matmul kernels. Each comes in two flavours: the plain name runs
// row-parallel under OpenMP (when built with CFP_USE_OPENMP), the *_serial
// name is the single-threaded reference. Both call the same per-row routine
// with a fixed inner accumulation order, so results are bit-identical at any
// thread count — tests and benchmarks rely on that.

// C[M,N] = A[M,K] * B[K,N]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_serial(const Tensor& a, const Tensor& b);

// C[M,N] = A[M,K] * B[N,K]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_nt_serial(const Tensor& a, const Tensor& b);

// C[K,N] = A[M,K]^T * B[M,N]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_tn_serial(const Tensor& a, const Tensor& b);

// True when built with OpenMP support.
bool openmp_enabled();

// Number of threads the parallel kernels will use (1 without OpenMP).
int kernel_threads();

}  // namespace cfp
