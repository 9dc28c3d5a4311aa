#pragma once

#include <cstddef>

#include "kalm/tensor.hpp"

namespace kalm::kernels {

// Dense kernels behind the autodiff tape. Each kernel has an OpenMP
// variant (the default) and a serial reference variant used by tests and
// the benchmark. Parallelization is always over independent output
// elements, so results are bitwise identical across thread counts.

// y = W * x.  W: m x n, x: n, y: m.
void matvec(const Tensor& W, const double* x, double* y);
void matvec_ref(const Tensor& W, const double* x, double* y);

// Same, restricted to the first `rows` rows of W (tied-embedding decoder).
void matvec_rows(const Tensor& W, size_t rows, const double* x, double* y);
void matvec_rows_ref(const Tensor& W, size_t rows, const double* x, double* y);

// gx += W^T * gy.  W: m x n, gy: m, gx: n.
void matvec_transpose_accum(const Tensor& W, const double* gy, double* gx);
void matvec_transpose_accum_ref(const Tensor& W, const double* gy, double* gx);

// Restricted transpose accumulate over the first `rows` rows.
void matvec_rows_transpose_accum(const Tensor& W, size_t rows, const double* gy,
                                 double* gx);

// dW += gy (outer) x.  dW: m x n, gy: m, x: n.
void outer_accum(Tensor& dW, const double* gy, const double* x);
void outer_accum_ref(Tensor& dW, const double* gy, const double* x);

// Restricted outer accumulate over the first `rows` rows of dW.
void outer_rows_accum(Tensor& dW, size_t rows, const double* gy, const double* x);

}  // namespace kalm::kernels
