#include <atomic>
#include <cstdlib>
#include <string>

#include "kernel_tables.hpp"
#include "nsdesk/common/error.hpp"

namespace nsdesk::simd {
namespace {

Isa initial_isa() {
    if (const char* env = std::getenv("NSDESK_ISA")) {
        const std::string v(env);
        if (v == "scalar") {
            return Isa::scalar;
        }
        if (v == "avx2" && cpu_supports_avx2()) {
            return Isa::avx2;
        }
    }
    return cpu_supports_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& active() {
    static std::atomic<Isa> isa{initial_isa()};
    return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

bool cpu_supports_avx2() {
#if defined(NSDESK_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool ok = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return ok;
#else
    return false;
#endif
}

template <>
const Kernels<float>* avx2_kernels<float>() {
#if defined(NSDESK_HAVE_AVX2)
    return cpu_supports_avx2() ? &detail::avx2_table_f32() : nullptr;
#else
    return nullptr;
#endif
}

template <>
const Kernels<double>* avx2_kernels<double>() {
#if defined(NSDESK_HAVE_AVX2)
    return cpu_supports_avx2() ? &detail::avx2_table_f64() : nullptr;
#else
    return nullptr;
#endif
}

template <typename T>
const Kernels<T>& kernels() {
    if (active().load(std::memory_order_relaxed) == Isa::avx2) {
        if (const Kernels<T>* k = avx2_kernels<T>()) {
            return *k;
        }
    }
    return scalar_kernels<T>();
}

template const Kernels<float>& kernels<float>();
template const Kernels<double>& kernels<double>();

Isa active_isa() { return active().load(); }

void set_active_isa(Isa isa) {
    if (isa == Isa::avx2 && !cpu_supports_avx2()) {
        throw ConfigError("AVX2 kernels are not available on this machine");
    }
    active().store(isa);
}

}  // namespace nsdesk::simd
