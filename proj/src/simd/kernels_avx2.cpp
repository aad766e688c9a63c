// Compiled with -mavx2 -mfma. Nothing in here may run unless the dispatcher
// has confirmed CPU support.
#include <immintrin.h>

#include <cmath>

#include "kernel_tables.hpp"

namespace nsdesk::simd {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg set1(double v) { return _mm256_set1_pd(v); }
    static reg zero() { return _mm256_setzero_pd(); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
    static reg gt_zero_mask(reg a) { return _mm256_cmp_pd(a, zero(), _CMP_GT_OQ); }
    static reg and_mask(reg m, reg v) { return _mm256_and_pd(m, v); }
    static double hsum(reg v) {
        const __m128d lo = _mm256_castpd256_pd128(v);
        const __m128d hi = _mm256_extractf128_pd(v, 1);
        const __m128d s = _mm_add_pd(lo, hi);
        return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
    }
};

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg set1(float v) { return _mm256_set1_ps(v); }
    static reg zero() { return _mm256_setzero_ps(); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
    static reg gt_zero_mask(reg a) { return _mm256_cmp_ps(a, zero(), _CMP_GT_OQ); }
    static reg and_mask(reg m, reg v) { return _mm256_and_ps(m, v); }
    static float hsum(reg v) {
        const __m128 lo = _mm256_castps256_ps128(v);
        const __m128 hi = _mm256_extractf128_ps(v, 1);
        __m128 s = _mm_add_ps(lo, hi);
        s = _mm_add_ps(s, _mm_movehl_ps(s, s));
        s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x55));
        return _mm_cvtss_f32(s);
    }
};

// Register tile of R rows x 2 vectors. Each C element accumulates its k terms
// in increasing order with fused multiply-add, regardless of where the tile
// sits, so results do not depend on matrix size or row position.
template <typename T, int R>
inline void tile_2v(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                    std::size_t ldc, bool accumulate) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    typename V::reg c0[R];
    typename V::reg c1[R];
    for (int r = 0; r < R; ++r) {
        c0[r] = accumulate ? V::load(c + r * ldc) : V::zero();
        c1[r] = accumulate ? V::load(c + r * ldc + W) : V::zero();
    }
    for (std::size_t p = 0; p < k; ++p) {
        const typename V::reg b0 = V::load(b + p * ldb);
        const typename V::reg b1 = V::load(b + p * ldb + W);
        for (int r = 0; r < R; ++r) {
            const typename V::reg av = V::set1(a[r * lda + p]);
            c0[r] = V::fmadd(av, b0, c0[r]);
            c1[r] = V::fmadd(av, b1, c1[r]);
        }
    }
    for (int r = 0; r < R; ++r) {
        V::store(c + r * ldc, c0[r]);
        V::store(c + r * ldc + W, c1[r]);
    }
}

template <typename T, int R>
inline void tile_1v(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                    std::size_t ldc, bool accumulate) {
    using V = Vec<T>;
    typename V::reg c0[R];
    for (int r = 0; r < R; ++r) {
        c0[r] = accumulate ? V::load(c + r * ldc) : V::zero();
    }
    for (std::size_t p = 0; p < k; ++p) {
        const typename V::reg b0 = V::load(b + p * ldb);
        for (int r = 0; r < R; ++r) {
            c0[r] = V::fmadd(V::set1(a[r * lda + p]), b0, c0[r]);
        }
    }
    for (int r = 0; r < R; ++r) {
        V::store(c + r * ldc, c0[r]);
    }
}

template <typename T>
inline void tail_scalar(std::size_t rows, std::size_t cols, std::size_t k, const T* a,
                        std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
                        bool accumulate) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            T acc = accumulate ? c[r * ldc + j] : T(0);
            for (std::size_t p = 0; p < k; ++p) {
                acc = std::fma(a[r * lda + p], b[p * ldb + j], acc);
            }
            c[r * ldc + j] = acc;
        }
    }
}

template <typename T, template <typename, int> class Tile>
inline void run_rows(std::size_t rows, std::size_t k, const T* a, std::size_t lda, const T* b,
                     std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    switch (rows) {
        case 4: Tile<T, 4>::run(k, a, lda, b, ldb, c, ldc, accumulate); break;
        case 3: Tile<T, 3>::run(k, a, lda, b, ldb, c, ldc, accumulate); break;
        case 2: Tile<T, 2>::run(k, a, lda, b, ldb, c, ldc, accumulate); break;
        default: Tile<T, 1>::run(k, a, lda, b, ldb, c, ldc, accumulate); break;
    }
}

template <typename T, int R>
struct Tile2 {
    static void run(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                    std::size_t ldc, bool accumulate) {
        tile_2v<T, R>(k, a, lda, b, ldb, c, ldc, accumulate);
    }
};

template <typename T, int R>
struct Tile1 {
    static void run(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                    std::size_t ldc, bool accumulate) {
        tile_1v<T, R>(k, a, lda, b, ldb, c, ldc, accumulate);
    }
};

template <typename T>
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
               std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    constexpr std::size_t W = Vec<T>::width;
    constexpr std::size_t MR = 4;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
        for (std::size_t i = 0; i < m; i += MR) {
            const std::size_t rows = m - i < MR ? m - i : MR;
            run_rows<T, Tile2>(rows, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
        }
    }
    for (; j + W <= n; j += W) {
        for (std::size_t i = 0; i < m; i += MR) {
            const std::size_t rows = m - i < MR ? m - i : MR;
            run_rows<T, Tile1>(rows, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
        }
    }
    if (j < n) {
        tail_scalar<T>(m, n - j, k, a, lda, b + j, ldb, c + j, ldc, accumulate);
    }
}

template <typename T, typename Op, typename ScalarOp>
inline void binary(std::size_t n, const T* x, const T* y, T* out, Op op, ScalarOp sop) {
    using V = Vec<T>;
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        V::store(out + i, op(V::load(x + i), V::load(y + i)));
    }
    for (; i < n; ++i) {
        out[i] = sop(x[i], y[i]);
    }
}

template <typename T>
void add_avx2(std::size_t n, const T* x, const T* y, T* out) {
    binary<T>(n, x, y, out, Vec<T>::add, [](T p, T q) { return p + q; });
}

template <typename T>
void sub_avx2(std::size_t n, const T* x, const T* y, T* out) {
    binary<T>(n, x, y, out, Vec<T>::sub, [](T p, T q) { return p - q; });
}

template <typename T>
void mul_avx2(std::size_t n, const T* x, const T* y, T* out) {
    binary<T>(n, x, y, out, Vec<T>::mul, [](T p, T q) { return p * q; });
}

template <typename T>
void axpy_avx2(std::size_t n, T alpha, const T* x, T* y) {
    using V = Vec<T>;
    const typename V::reg av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
    }
    for (; i < n; ++i) {
        y[i] = std::fma(alpha, x[i], y[i]);
    }
}

template <typename T>
void mul_acc_avx2(std::size_t n, const T* x, const T* y, T* out) {
    using V = Vec<T>;
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        V::store(out + i, V::fmadd(V::load(x + i), V::load(y + i), V::load(out + i)));
    }
    for (; i < n; ++i) {
        out[i] = std::fma(x[i], y[i], out[i]);
    }
}

template <typename T>
void scale_avx2(std::size_t n, T alpha, const T* x, T* out) {
    using V = Vec<T>;
    const typename V::reg av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        V::store(out + i, V::mul(av, V::load(x + i)));
    }
    for (; i < n; ++i) {
        out[i] = alpha * x[i];
    }
}

template <typename T>
void relu_avx2(std::size_t n, const T* x, T* out) {
    using V = Vec<T>;
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        const typename V::reg v = V::load(x + i);
        V::store(out + i, V::and_mask(V::gt_zero_mask(v), v));
    }
    for (; i < n; ++i) {
        out[i] = x[i] > T(0) ? x[i] : T(0);
    }
}

template <typename T>
void relu_backward_avx2(std::size_t n, const T* x, const T* gy, T* gx) {
    using V = Vec<T>;
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        const typename V::reg m = V::gt_zero_mask(V::load(x + i));
        V::store(gx + i, V::add(V::load(gx + i), V::and_mask(m, V::load(gy + i))));
    }
    for (; i < n; ++i) {
        if (x[i] > T(0)) gx[i] += gy[i];
    }
}

template <typename T>
T sum_avx2(std::size_t n, const T* x) {
    using V = Vec<T>;
    typename V::reg s0 = V::zero();
    typename V::reg s1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * V::width <= n; i += 2 * V::width) {
        s0 = V::add(s0, V::load(x + i));
        s1 = V::add(s1, V::load(x + i + V::width));
    }
    for (; i + V::width <= n; i += V::width) {
        s0 = V::add(s0, V::load(x + i));
    }
    T s = V::hsum(V::add(s0, s1));
    for (; i < n; ++i) {
        s += x[i];
    }
    return s;
}

template <typename T>
T dot_avx2(std::size_t n, const T* x, const T* y) {
    using V = Vec<T>;
    typename V::reg s0 = V::zero();
    typename V::reg s1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * V::width <= n; i += 2 * V::width) {
        s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
        s1 = V::fmadd(V::load(x + i + V::width), V::load(y + i + V::width), s1);
    }
    for (; i + V::width <= n; i += V::width) {
        s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
    }
    T s = V::hsum(V::add(s0, s1));
    for (; i < n; ++i) {
        s = std::fma(x[i], y[i], s);
    }
    return s;
}

template <typename T>
constexpr Kernels<T> make_avx2() {
    return Kernels<T>{Isa::avx2,     &gemm_avx2<T>,          &add_avx2<T>,    &sub_avx2<T>,
                      &mul_avx2<T>,  &axpy_avx2<T>,          &mul_acc_avx2<T>, &scale_avx2<T>,
                      &relu_avx2<T>, &relu_backward_avx2<T>, &sum_avx2<T>,    &dot_avx2<T>};
}

constexpr Kernels<float> kAvx2F32 = make_avx2<float>();
constexpr Kernels<double> kAvx2F64 = make_avx2<double>();

}  // namespace

namespace detail {

const Kernels<float>& avx2_table_f32() { return kAvx2F32; }
const Kernels<double>& avx2_table_f64() { return kAvx2F64; }

}  // namespace detail
}  // namespace nsdesk::simd
