#pragma once

#include "blockdiff/simd/kernels.hpp"

namespace blockdiff::simd {

// Defined in the ISA-specific translation units; null when the variant is not
// compiled for this target.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

}  // namespace blockdiff::simd
