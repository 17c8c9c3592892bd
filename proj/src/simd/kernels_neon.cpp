// AArch64 Advanced SIMD variant. Uses separate multiply and add (never vfmaq)
// so results match the scalar reference bit for bit.

#include "kernels_internal.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>
#endif

namespace blockdiff::simd {

#if defined(__aarch64__)
namespace {

inline float64x2_t madd(float64x2_t acc, float64x2_t a, float64x2_t x) {
  return vaddq_f64(acc, vmulq_f64(a, x));
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f64(y + i, madd(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    vst1q_f64(y + i + 2, madd(vld1q_f64(y + i + 2), va, vld1q_f64(x + i + 2)));
  }
  for (; i < n; ++i) {
    y[i] += a * x[i];
  }
}

double dot(std::size_t n, const double* x, const double* y) {
  float64x2_t lo = vdupq_n_f64(0.0);  // lanes 0, 1
  float64x2_t hi = vdupq_n_f64(0.0);  // lanes 2, 3
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    lo = madd(lo, vld1q_f64(x + i), vld1q_f64(y + i));
    hi = madd(hi, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double lane[4];
  vst1q_f64(lane, lo);
  vst1q_f64(lane + 2, hi);
  for (; i < n; ++i) {
    lane[i & 3] += x[i] * y[i];
  }
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      float64x2_t c0 = vld1q_f64(crow + j);
      float64x2_t c1 = vld1q_f64(crow + j + 2);
      float64x2_t c2 = vld1q_f64(crow + j + 4);
      float64x2_t c3 = vld1q_f64(crow + j + 6);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t va = vdupq_n_f64(arow[p]);
        const double* brow = b + p * n + j;
        c0 = madd(c0, va, vld1q_f64(brow));
        c1 = madd(c1, va, vld1q_f64(brow + 2));
        c2 = madd(c2, va, vld1q_f64(brow + 4));
        c3 = madd(c3, va, vld1q_f64(brow + 6));
      }
      vst1q_f64(crow + j, c0);
      vst1q_f64(crow + j + 2, c1);
      vst1q_f64(crow + j + 4, c2);
      vst1q_f64(crow + j + 6, c3);
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

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* g, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    double* crow = c + p * n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      float64x2_t c0 = vld1q_f64(crow + j);
      float64x2_t c1 = vld1q_f64(crow + j + 2);
      float64x2_t c2 = vld1q_f64(crow + j + 4);
      float64x2_t c3 = vld1q_f64(crow + j + 6);
      for (std::size_t i = 0; i < m; ++i) {
        const float64x2_t va = vdupq_n_f64(a[i * k + p]);
        const double* grow = g + i * n + j;
        c0 = madd(c0, va, vld1q_f64(grow));
        c1 = madd(c1, va, vld1q_f64(grow + 2));
        c2 = madd(c2, va, vld1q_f64(grow + 4));
        c3 = madd(c3, va, vld1q_f64(grow + 6));
      }
      vst1q_f64(crow + j, c0);
      vst1q_f64(crow + j + 2, c1);
      vst1q_f64(crow + j + 4, c2);
      vst1q_f64(crow + j + 6, c3);
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
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vld1q_f64(x + i)));
  }
  for (; i < n; ++i) {
    y[i] += x[i];
  }
}

void mul(std::size_t n, const double* x, const double* y, double* z) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(z + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  }
  for (; i < n; ++i) {
    z[i] = x[i] * y[i];
  }
}

void scale(std::size_t n, double a, const double* x, double* y) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vmulq_f64(va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) {
    y[i] = a * x[i];
  }
}

}  // namespace

const KernelTable* neon_kernels() {
  static const KernelTable table{"neon", axpy, dot, gemm_nn, gemm_tn,
                                 add,    mul,  scale};
  return &table;
}

#else

const KernelTable* neon_kernels() { return nullptr; }

#endif

}  // namespace blockdiff::simd
