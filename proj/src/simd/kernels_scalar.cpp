#include "nsdesk/simd/kernels.hpp"

namespace nsdesk::simd {
namespace {

template <typename T>
void gemm_ref(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
              std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] = T(0);
            }
        }
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * lda + p];
            const T* brow = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void add_ref(std::size_t n, const T* x, const T* y, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <typename T>
void sub_ref(std::size_t n, const T* x, const T* y, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

template <typename T>
void mul_ref(std::size_t n, const T* x, const T* y, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void mul_acc_ref(std::size_t n, const T* x, const T* y, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] += x[i] * y[i];
}

template <typename T>
void scale_ref(std::size_t n, T alpha, const T* x, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
void relu_ref(std::size_t n, const T* x, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward_ref(std::size_t n, const T* x, const T* gy, T* gx) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > T(0)) gx[i] += gy[i];
    }
}

template <typename T>
T sum_ref(std::size_t n, const T* x) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

template <typename T>
T dot_ref(std::size_t n, const T* x, const T* y) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

template <typename T>
constexpr Kernels<T> make_scalar() {
    return Kernels<T>{Isa::scalar,   &gemm_ref<T>,          &add_ref<T>,   &sub_ref<T>,
                      &mul_ref<T>,   &axpy_ref<T>,          &mul_acc_ref<T>, &scale_ref<T>,
                      &relu_ref<T>,  &relu_backward_ref<T>, &sum_ref<T>,   &dot_ref<T>};
}

constexpr Kernels<float> kScalarF32 = make_scalar<float>();
constexpr Kernels<double> kScalarF64 = make_scalar<double>();

}  // namespace

template <>
const Kernels<float>& scalar_kernels<float>() {
    return kScalarF32;
}

template <>
const Kernels<double>& scalar_kernels<double>() {
    return kScalarF64;
}

}  // namespace nsdesk::simd
