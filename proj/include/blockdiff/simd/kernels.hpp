#pragma once

// Dense double-precision inner loops used by the tensor ops.
//
// Every kernel has a scalar reference and optional vector variants. All
// variants perform the same floating-point operations in the same order, so
// their results are bit-identical (the build disables FMA contraction):
//
//  - axpy / gemm / elementwise kernels vectorize across independent output
//    elements; each output is still a left-to-right fold over the reduction
//    index.
//  - dot uses four interleaved partial sums: lane l accumulates x[i]*y[i]
//    for i = l (mod 4) in increasing i, and the result is
//    (lane0 + lane1) + (lane2 + lane3).

#include <cstddef>
#include <string_view>
#include <vector>

namespace blockdiff::simd {

struct KernelTable {
  std::string_view name;

  /// y[i] += a * x[i]
  void (*axpy)(std::size_t n, double a, const double* x, double* y);

  /// Four-lane fixed-order dot product (see file comment).
  double (*dot)(std::size_t n, const double* x, const double* y);

  /// C[m x n] += A[m x k] * B[k x n], all row-major. Each C[i][j] is folded
  /// over p = 0..k-1 in order.
  void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c);

  /// C[k x n] += A[m x k]^T * G[m x n]. Rows i of A and G are folded into C
  /// in increasing i.
  void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* g, double* c);

  /// y[i] += x[i]
  void (*add)(std::size_t n, const double* x, double* y);

  /// z[i] = x[i] * y[i]
  void (*mul)(std::size_t n, const double* x, const double* y, double* z);

  /// y[i] = a * x[i]
  void (*scale)(std::size_t n, double a, const double* x, double* y);
};

const KernelTable& scalar_kernels();

/// Vector tables compiled into this binary and supported by the running CPU.
/// Always excludes the scalar table.
std::vector<const KernelTable*> vector_kernels();

/// The table used by tensor ops. Chosen once: the widest supported vector
/// table, unless BLOCKDIFF_KERNELS names another ("scalar", "avx2", "neon").
const KernelTable& active();

/// Overrides the active table (tests and benchmarks). Not thread-safe with
/// concurrent tensor ops.
void set_active(const KernelTable& table);

}  // namespace blockdiff::simd
