#include <cmath>
#include <vector>

#include "doctest.h"
#include "nsdesk/common/rng.hpp"
#include "nsdesk/simd/kernels.hpp"

using namespace nsdesk;
using namespace nsdesk::simd;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
    std::vector<T> v(n);
    for (T& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
    return v;
}

template <typename T>
T tolerance();
template <>
float tolerance<float>() { return 2e-5f; }
template <>
double tolerance<double>() { return 1e-12; }

template <typename T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, T scale) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i] - b[i]) <= tolerance<T>() * scale);
    }
}

// Independent triple loop in long double.
template <typename T>
std::vector<T> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<T>& a,
                          const std::vector<T>& b) {
    std::vector<T> c(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += (long double)a[i * k + p] * b[p * n + j];
            c[i * n + j] = static_cast<T>(s);
        }
    return c;
}

template <typename T>
void gemm_equivalence() {
    const Kernels<T>* fast = avx2_kernels<T>();
    const Kernels<T>& ref = scalar_kernels<T>();
    Rng rng(11);
    const std::size_t sizes[][3] = {{1, 1, 1},  {4, 16, 8},  {5, 17, 3},  {16, 1024, 27},
                                    {7, 9, 33}, {64, 64, 576}, {3, 23, 2}, {13, 40, 1}};
    for (const auto& s : sizes) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        CAPTURE(m);
        CAPTURE(n);
        CAPTURE(k);
        const auto a = random_vec<T>(m * k, rng);
        const auto b = random_vec<T>(k * n, rng);
        const auto oracle = naive_gemm<T>(m, n, k, a, b);
        std::vector<T> c_ref(m * n), c_fast(m * n);
        ref.gemm(m, n, k, a.data(), k, b.data(), n, c_ref.data(), n, false);
        check_close(c_ref, oracle, static_cast<T>(k));
        if (fast != nullptr) {
            fast->gemm(m, n, k, a.data(), k, b.data(), n, c_fast.data(), n, false);
            check_close(c_fast, oracle, static_cast<T>(k));
            // accumulate mode adds onto existing contents
            auto c_acc = c_fast;
            fast->gemm(m, n, k, a.data(), k, b.data(), n, c_acc.data(), n, true);
            for (std::size_t i = 0; i < c_acc.size(); ++i) {
                CHECK(std::abs(c_acc[i] - 2 * oracle[i]) <= tolerance<T>() * 2 * k);
            }
        }
    }
}

template <typename T>
void elementwise_equivalence() {
    const Kernels<T>* fast = avx2_kernels<T>();
    if (fast == nullptr) return;
    const Kernels<T>& ref = scalar_kernels<T>();
    Rng rng(5);
    for (std::size_t n : {0u, 1u, 7u, 8u, 15u, 16u, 17u, 100u, 1023u}) {
        CAPTURE(n);
        const auto x = random_vec<T>(n, rng);
        const auto y = random_vec<T>(n, rng);
        std::vector<T> r1(n), r2(n);
        ref.add(n, x.data(), y.data(), r1.data());
        fast->add(n, x.data(), y.data(), r2.data());
        CHECK(r1 == r2);
        ref.sub(n, x.data(), y.data(), r1.data());
        fast->sub(n, x.data(), y.data(), r2.data());
        CHECK(r1 == r2);
        ref.mul(n, x.data(), y.data(), r1.data());
        fast->mul(n, x.data(), y.data(), r2.data());
        CHECK(r1 == r2);
        ref.scale(n, T(0.37), x.data(), r1.data());
        fast->scale(n, T(0.37), x.data(), r2.data());
        CHECK(r1 == r2);
        ref.relu(n, x.data(), r1.data());
        fast->relu(n, x.data(), r2.data());
        CHECK(r1 == r2);
        r1 = y;
        r2 = y;
        ref.relu_backward(n, x.data(), y.data(), r1.data());
        fast->relu_backward(n, x.data(), y.data(), r2.data());
        CHECK(r1 == r2);
        r1 = y;
        r2 = y;
        ref.axpy(n, T(-1.5), x.data(), r1.data());
        fast->axpy(n, T(-1.5), x.data(), r2.data());
        check_close(r1, r2, T(4));
        r1 = y;
        r2 = y;
        ref.mul_acc(n, x.data(), y.data(), r1.data());
        fast->mul_acc(n, x.data(), y.data(), r2.data());
        check_close(r1, r2, T(4));
        CHECK(std::abs(ref.sum(n, x.data()) - fast->sum(n, x.data())) <= tolerance<T>() * (n + 1));
        CHECK(std::abs(ref.dot(n, x.data(), y.data()) - fast->dot(n, x.data(), y.data())) <=
              tolerance<T>() * (n + 1));
    }
}

}  // namespace

TEST_CASE("gemm variants agree with an extended-precision triple loop") {
    gemm_equivalence<double>();
    gemm_equivalence<float>();
}

TEST_CASE("elementwise and reduction kernels agree across ISAs") {
    elementwise_equivalence<double>();
    elementwise_equivalence<float>();
}

TEST_CASE("gemm rows do not depend on how many rows are computed together") {
    for (Isa isa : {Isa::scalar, Isa::avx2}) {
        if (isa == Isa::avx2 && !cpu_supports_avx2()) continue;
        ScopedIsa scope(isa);
        const Kernels<double>& k = kernels<double>();
        Rng rng(3);
        const std::size_t m = 7, n = 19, kk = 13;
        const auto a = random_vec<double>(m * kk, rng);
        const auto b = random_vec<double>(kk * n, rng);
        std::vector<double> full(m * n);
        k.gemm(m, n, kk, a.data(), kk, b.data(), n, full.data(), n, false);
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> row(n);
            k.gemm(1, n, kk, a.data() + i * kk, kk, b.data(), n, row.data(), n, false);
            CHECK(std::equal(row.begin(), row.end(), full.begin() + i * n));
        }
    }
}

TEST_CASE("ISA selection") {
    CHECK(isa_name(Isa::scalar) == "scalar");
    {
        ScopedIsa scope(Isa::scalar);
        CHECK(kernels<float>().isa == Isa::scalar);
        CHECK(kernels<double>().isa == Isa::scalar);
    }
    if (cpu_supports_avx2()) {
        ScopedIsa scope(Isa::avx2);
        CHECK(kernels<double>().isa == Isa::avx2);
    } else {
        CHECK_THROWS(set_active_isa(Isa::avx2));
    }
}
