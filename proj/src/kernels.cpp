#include "kalm/kernels.hpp"

#include <cstdint>

namespace kalm::kernels {

// Below this many multiply-adds the fork/join overhead dominates.
static constexpr size_t kParallelCutoff = 16384;

void matvec_ref(const Tensor& W, const double* x, double* y) {
  const size_t m = W.rows(), n = W.cols();
  const double* w = W.data();
  for (size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = w + i * n;
    for (size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec(const Tensor& W, const double* x, double* y) {
  const size_t m = W.rows(), n = W.cols();
  const double* w = W.data();
#pragma omp parallel for if (m * n >= kParallelCutoff) schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(m); ++i) {
    double acc = 0.0;
    const double* row = w + static_cast<size_t>(i) * n;
    for (size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_rows_ref(const Tensor& W, size_t rows, const double* x, double* y) {
  const size_t n = W.cols();
  const double* w = W.data();
  for (size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* row = w + i * n;
    for (size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_rows(const Tensor& W, size_t rows, const double* x, double* y) {
  const size_t n = W.cols();
  const double* w = W.data();
#pragma omp parallel for if (rows * n >= kParallelCutoff) schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(rows); ++i) {
    double acc = 0.0;
    const double* row = w + static_cast<size_t>(i) * n;
    for (size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_transpose_accum_ref(const Tensor& W, const double* gy, double* gx) {
  const size_t m = W.rows(), n = W.cols();
  const double* w = W.data();
  for (size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (size_t i = 0; i < m; ++i) acc += w[i * n + j] * gy[i];
    gx[j] += acc;
  }
}

void matvec_transpose_accum(const Tensor& W, const double* gy, double* gx) {
  const size_t m = W.rows(), n = W.cols();
  const double* w = W.data();
#pragma omp parallel for if (m * n >= kParallelCutoff) schedule(static)
  for (int64_t j = 0; j < static_cast<int64_t>(n); ++j) {
    double acc = 0.0;
    for (size_t i = 0; i < m; ++i) acc += w[i * n + static_cast<size_t>(j)] * gy[i];
    gx[j] += acc;
  }
}

void matvec_rows_transpose_accum(const Tensor& W, size_t rows, const double* gy,
                                 double* gx) {
  const size_t n = W.cols();
  const double* w = W.data();
#pragma omp parallel for if (rows * n >= kParallelCutoff) schedule(static)
  for (int64_t j = 0; j < static_cast<int64_t>(n); ++j) {
    double acc = 0.0;
    for (size_t i = 0; i < rows; ++i) acc += w[i * n + static_cast<size_t>(j)] * gy[i];
    gx[j] += acc;
  }
}

void outer_accum_ref(Tensor& dW, const double* gy, const double* x) {
  const size_t m = dW.rows(), n = dW.cols();
  double* w = dW.data();
  for (size_t i = 0; i < m; ++i) {
    double g = gy[i];
    double* row = w + i * n;
    for (size_t j = 0; j < n; ++j) row[j] += g * x[j];
  }
}

void outer_accum(Tensor& dW, const double* gy, const double* x) {
  const size_t m = dW.rows(), n = dW.cols();
  double* w = dW.data();
#pragma omp parallel for if (m * n >= kParallelCutoff) schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(m); ++i) {
    double g = gy[i];
    double* row = w + static_cast<size_t>(i) * n;
    for (size_t j = 0; j < n; ++j) row[j] += g * x[j];
  }
}

void outer_rows_accum(Tensor& dW, size_t rows, const double* gy, const double* x) {
  const size_t n = dW.cols();
  double* w = dW.data();
#pragma omp parallel for if (rows * n >= kParallelCutoff) schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(rows); ++i) {
    double g = gy[i];
    double* row = w + static_cast<size_t>(i) * n;
    for (size_t j = 0; j < n; ++j) row[j] += g * x[j];
  }
}

}  // namespace kalm::kernels
