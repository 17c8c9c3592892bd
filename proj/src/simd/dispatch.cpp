#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "blockdiff/simd/kernels.hpp"
#include "kernels_internal.hpp"

namespace blockdiff::simd {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* select_default() {
  if (const char* env = std::getenv("BLOCKDIFF_KERNELS"); env != nullptr) {
    const std::string want(env);
    if (want == "scalar") {
      return &scalar_kernels();
    }
    if (want != "auto") {
      for (const KernelTable* t : vector_kernels()) {
        if (t->name == want) {
          return t;
        }
      }
      throw std::runtime_error("BLOCKDIFF_KERNELS=" + want +
                               " is not available on this machine");
    }
  }
  const auto tables = vector_kernels();
  return tables.empty() ? &scalar_kernels() : tables.front();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{select_default()};
  return current;
}

}  // namespace

std::vector<const KernelTable*> vector_kernels() {
  std::vector<const KernelTable*> out;
  if (const KernelTable* t = avx2_kernels(); t != nullptr && cpu_has_avx2()) {
    out.push_back(t);
  }
  if (const KernelTable* t = neon_kernels(); t != nullptr) {
    out.push_back(t);
  }
  return out;
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_active(const KernelTable& table) {
  slot().store(&table, std::memory_order_release);
}

}  // namespace blockdiff::simd
