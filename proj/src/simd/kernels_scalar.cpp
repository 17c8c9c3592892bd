#include "blockdiff/simd/kernels.hpp"

#include "kernels_internal.hpp"

namespace blockdiff::simd {
namespace {

void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += a * x[i];
  }
}

double dot(std::size_t n, const double* x, const double* y) {
  double lane[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    lane[i & 3] += x[i] * y[i];
  }
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      axpy(n, arow[p], b + p * n, crow);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* g, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      axpy(n, arow[p], grow, c + p * n);
    }
  }
}

void add(std::size_t n, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += x[i];
  }
}

void mul(std::size_t n, const double* x, const double* y, double* z) {
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = x[i] * y[i];
  }
}

void scale(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = a * x[i];
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", axpy, dot, gemm_nn, gemm_tn,
                                 add,      mul,  scale};
  return table;
}

}  // namespace blockdiff::simd
