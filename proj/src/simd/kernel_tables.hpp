#pragma once

#include "nsdesk/simd/kernels.hpp"

namespace nsdesk::simd::detail {

#if defined(NSDESK_HAVE_AVX2)
const Kernels<float>& avx2_table_f32();
const Kernels<double>& avx2_table_f64();
#endif

}  // namespace nsdesk::simd::detail
