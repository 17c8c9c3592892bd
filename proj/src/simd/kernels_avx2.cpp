// Compiled with -mavx2 (and never -mfma) when the target is x86-64.

#include "kernels_internal.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace blockdiff::simd {

#if defined(__AVX2__)
namespace {

inline __m256d madd(__m256d acc, __m256d a, __m256d x) {
  return _mm256_add_pd(acc, _mm256_mul_pd(a, x));
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m256d y0 = _mm256_loadu_pd(y + i);
    __m256d y1 = _mm256_loadu_pd(y + i + 4);
    __m256d y2 = _mm256_loadu_pd(y + i + 8);
    __m256d y3 = _mm256_loadu_pd(y + i + 12);
    y0 = madd(y0, va, _mm256_loadu_pd(x + i));
    y1 = madd(y1, va, _mm256_loadu_pd(x + i + 4));
    y2 = madd(y2, va, _mm256_loadu_pd(x + i + 8));
    y3 = madd(y3, va, _mm256_loadu_pd(x + i + 12));
    _mm256_storeu_pd(y + i, y0);
    _mm256_storeu_pd(y + i + 4, y1);
    _mm256_storeu_pd(y + i + 8, y2);
    _mm256_storeu_pd(y + i + 12, y3);
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, madd(_mm256_loadu_pd(y + i), va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) {
    y[i] += a * x[i];
  }
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = madd(acc, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
  }
  alignas(32) double lane[4];
  _mm256_store_pd(lane, acc);
  for (; i < n; ++i) {
    lane[i & 3] += x[i] * y[i];
  }
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

// C row i, columns [j, j+16): folded over p with four accumulators.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d c0 = _mm256_loadu_pd(crow + j);
      __m256d c1 = _mm256_loadu_pd(crow + j + 4);
      __m256d c2 = _mm256_loadu_pd(crow + j + 8);
      __m256d c3 = _mm256_loadu_pd(crow + j + 12);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d va = _mm256_set1_pd(arow[p]);
        const double* brow = b + p * n + j;
        c0 = madd(c0, va, _mm256_loadu_pd(brow));
        c1 = madd(c1, va, _mm256_loadu_pd(brow + 4));
        c2 = madd(c2, va, _mm256_loadu_pd(brow + 8));
        c3 = madd(c3, va, _mm256_loadu_pd(brow + 12));
      }
      _mm256_storeu_pd(crow + j, c0);
      _mm256_storeu_pd(crow + j + 4, c1);
      _mm256_storeu_pd(crow + j + 8, c2);
      _mm256_storeu_pd(crow + j + 12, c3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_loadu_pd(crow + j);
      for (std::size_t p = 0; p < k; ++p) {
        c0 = madd(c0, _mm256_set1_pd(arow[p]), _mm256_loadu_pd(b + p * n + j));
      }
      _mm256_storeu_pd(crow + j, c0);
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (std::size_t p = 0; p < k; ++p) {
        acc += arow[p] * b[p * n + j];
      }
      crow[j] = acc;
    }
  }
}

// C row p, columns [j, j+16): folded over i.
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* g, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    double* crow = c + p * n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d c0 = _mm256_loadu_pd(crow + j);
      __m256d c1 = _mm256_loadu_pd(crow + j + 4);
      __m256d c2 = _mm256_loadu_pd(crow + j + 8);
      __m256d c3 = _mm256_loadu_pd(crow + j + 12);
      for (std::size_t i = 0; i < m; ++i) {
        const __m256d va = _mm256_set1_pd(a[i * k + p]);
        const double* grow = g + i * n + j;
        c0 = madd(c0, va, _mm256_loadu_pd(grow));
        c1 = madd(c1, va, _mm256_loadu_pd(grow + 4));
        c2 = madd(c2, va, _mm256_loadu_pd(grow + 8));
        c3 = madd(c3, va, _mm256_loadu_pd(grow + 12));
      }
      _mm256_storeu_pd(crow + j, c0);
      _mm256_storeu_pd(crow + j + 4, c1);
      _mm256_storeu_pd(crow + j + 8, c2);
      _mm256_storeu_pd(crow + j + 12, c3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_loadu_pd(crow + j);
      for (std::size_t i = 0; i < m; ++i) {
        c0 = madd(c0, _mm256_set1_pd(a[i * k + p]), _mm256_loadu_pd(g + i * n + j));
      }
      _mm256_storeu_pd(crow + j, c0);
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (std::size_t i = 0; i < m; ++i) {
        acc += a[i * k + p] * g[i * n + j];
      }
      crow[j] = acc;
    }
  }
}

void add(std::size_t n, const double* x, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) {
    y[i] += x[i];
  }
}

void mul(std::size_t n, const double* x, const double* y, double* z) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) {
    z[i] = x[i] * y[i];
  }
}

void scale(std::size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) {
    y[i] = a * x[i];
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", axpy, dot, gemm_nn, gemm_tn,
                                 add,    mul,  scale};
  return &table;
}

#else

const KernelTable* avx2_kernels() { return nullptr; }

#endif

}  // namespace blockdiff::simd
