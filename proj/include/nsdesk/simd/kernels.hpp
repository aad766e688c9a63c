#pragma once

// Dense inner-loop kernels. Every routine has a portable scalar reference
// implementation; an AVX2+FMA variant is compiled on x86-64 and selected at
// runtime when the CPU supports it. NSDESK_ISA=scalar|avx2 in the environment
// overrides the automatic choice.

#include <cstddef>
#include <string_view>

namespace nsdesk::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct Kernels {
    Isa isa;

    // C[m x n] = A[m x k] * B[k x n]  (or C += ... when accumulate is set).
    // Row-major with explicit leading dimensions.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

    void (*add)(std::size_t n, const T* x, const T* y, T* out);
    void (*sub)(std::size_t n, const T* x, const T* y, T* out);
    void (*mul)(std::size_t n, const T* x, const T* y, T* out);
    // y += alpha * x
    void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
    // out += x * y
    void (*mul_acc)(std::size_t n, const T* x, const T* y, T* out);
    void (*scale)(std::size_t n, T alpha, const T* x, T* out);
    void (*relu)(std::size_t n, const T* x, T* out);
    // gx += gy where x > 0
    void (*relu_backward)(std::size_t n, const T* x, const T* gy, T* gx);
    T (*sum)(std::size_t n, const T* x);
    T (*dot)(std::size_t n, const T* x, const T* y);
};

bool cpu_supports_avx2();

template <typename T>
const Kernels<T>& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
template <typename T>
const Kernels<T>* avx2_kernels();

// Currently selected kernel set.
template <typename T>
const Kernels<T>& kernels();

Isa active_isa();

// Throws ConfigError if the requested ISA is unavailable on this machine.
void set_active_isa(Isa isa);

// RAII override used by the equivalence tests.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
    ~ScopedIsa() { set_active_isa(previous_); }
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

}  // namespace nsdesk::simd
