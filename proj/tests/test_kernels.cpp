#include <array>
#include <random>
#include <vector>

#include "blockdiff/simd/kernels.hpp"
#include "doctest.h"

using blockdiff::simd::KernelTable;

namespace {

std::vector<double> random_vec(std::mt19937_64& g, std::size_t n) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) {
    x = d(g);
  }
  return v;
}

void check_equivalent(const KernelTable& ref, const KernelTable& vec) {
  std::mt19937_64 g(7);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 33u, 100u}) {
    const auto x = random_vec(g, n);
    const auto y0 = random_vec(g, n);
    auto y1 = y0, y2 = y0;
    ref.axpy(n, 0.37, x.data(), y1.data());
    vec.axpy(n, 0.37, x.data(), y2.data());
    CHECK(y1 == y2);
    CHECK(ref.dot(n, x.data(), y0.data()) == vec.dot(n, x.data(), y0.data()));
    y1 = y0;
    y2 = y0;
    ref.add(n, x.data(), y1.data());
    vec.add(n, x.data(), y2.data());
    CHECK(y1 == y2);
    std::vector<double> z1(n), z2(n);
    ref.mul(n, x.data(), y0.data(), z1.data());
    vec.mul(n, x.data(), y0.data(), z2.data());
    CHECK(z1 == z2);
    ref.scale(n, -1.5, x.data(), z1.data());
    vec.scale(n, -1.5, x.data(), z2.data());
    CHECK(z1 == z2);
  }
  using Dims = std::array<std::size_t, 3>;
  for (const Dims& d : {Dims{1, 1, 1}, Dims{3, 5, 7}, Dims{8, 16, 16}, Dims{17, 9, 33},
                        Dims{4, 64, 260}, Dims{31, 2, 5}}) {
    const auto [m, k, n] = d;
    const auto a = random_vec(g, m * k);
    const auto b = random_vec(g, k * n);
    const auto c0 = random_vec(g, m * n);
    auto c1 = c0, c2 = c0;
    ref.gemm_nn(m, k, n, a.data(), b.data(), c1.data());
    vec.gemm_nn(m, k, n, a.data(), b.data(), c2.data());
    CHECK(c1 == c2);
    const auto gm = random_vec(g, m * n);
    const auto d0 = random_vec(g, k * n);
    auto d1 = d0, d2 = d0;
    ref.gemm_tn(m, k, n, a.data(), gm.data(), d1.data());
    vec.gemm_tn(m, k, n, a.data(), gm.data(), d2.data());
    CHECK(d1 == d2);
  }
}

}  // namespace

TEST_CASE("scalar dot follows the documented four-lane order") {
  const std::vector<double> x = {1e16, 1.0, -1e16, 1.0, 3.0};
  const std::vector<double> y = {1.0, 1.0, 1.0, 1.0, 1.0};
  // lane0: 1e16 + 3, lane1: 1, lane2: -1e16, lane3: 1
  const double expect = ((1e16 + 3.0) + 1.0) + (-1e16 + 1.0);
  CHECK(blockdiff::simd::scalar_kernels().dot(5, x.data(), y.data()) == expect);
}

TEST_CASE("scalar gemm matches a direct triple loop") {
  const std::vector<double> a = {1, 2, 3, 4, 5, 6};
  const std::vector<double> b = {7, 8, 9, 10, 11, 12};
  std::vector<double> c(4, 0.0);
  blockdiff::simd::scalar_kernels().gemm_nn(2, 3, 2, a.data(), b.data(), c.data());
  CHECK(c == std::vector<double>{58, 64, 139, 154});
  std::vector<double> d(6, 0.0);
  const std::vector<double> gm = {1, 0, 0, 1};
  blockdiff::simd::scalar_kernels().gemm_tn(2, 3, 2, a.data(), gm.data(), d.data());
  CHECK(d == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("every vector table is bit-identical to the scalar reference") {
  const auto tables = blockdiff::simd::vector_kernels();
  if (tables.empty()) {
    MESSAGE("no vector kernels available on this CPU");
  }
  for (const KernelTable* t : tables) {
    CAPTURE(t->name);
    check_equivalent(blockdiff::simd::scalar_kernels(), *t);
  }
}

TEST_CASE("active table can be overridden") {
  const KernelTable& before = blockdiff::simd::active();
  blockdiff::simd::set_active(blockdiff::simd::scalar_kernels());
  CHECK(blockdiff::simd::active().name == blockdiff::simd::scalar_kernels().name);
  blockdiff::simd::set_active(before);
}
