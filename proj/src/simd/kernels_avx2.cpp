// AVX2 + FMA kernels. This translation unit is the only one compiled with
// -mavx2 -mfma; it must only be entered after cpu_has_avx2() returned true.

#include <immintrin.h>

#include <cmath>
#include <cstdint>

#include "cfgat/simd/kernels.hpp"

namespace cfgat::simd {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg set1(double v) { return _mm256_set1_pd(v); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static __m256i tail_mask(std::size_t rem) {
        alignas(32) static const std::int64_t table[8] = {-1, -1, -1, -1, 0, 0, 0, 0};
        return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(table + 4 - rem));
    }
    static reg maskload(const double* p, __m256i m) { return _mm256_maskload_pd(p, m); }
    static void maskstore(double* p, __m256i m, reg v) { _mm256_maskstore_pd(p, m, v); }
    static double hsum(reg v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d sh = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
    }
};

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg set1(float v) { return _mm256_set1_ps(v); }
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static __m256i tail_mask(std::size_t rem) {
        alignas(32) static const std::int32_t table[16] = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                          0,  0,  0,  0,  0,  0,  0,  0};
        return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(table + 8 - rem));
    }
    static reg maskload(const float* p, __m256i m) { return _mm256_maskload_ps(p, m); }
    static void maskstore(float* p, __m256i m, reg v) { _mm256_maskstore_ps(p, m, v); }
    static float hsum(reg v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 sh = _mm_movehdup_ps(lo);
        __m128 s = _mm_add_ps(lo, sh);
        sh = _mm_movehl_ps(sh, s);
        return _mm_cvtss_f32(_mm_add_ss(s, sh));
    }
};

// Register tile: R rows x 2 vectors. Each output element is one FMA chain
// over k, so the tile shape does not change any result bit.
template <class T, std::size_t R>
inline void nn_tile(std::size_t q, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                    std::size_t ldc, bool accumulate) {
    using V = Vec<T>;
    typename V::reg acc[R][2];
    for (std::size_t r = 0; r < R; ++r) {
        acc[r][0] = accumulate ? V::load(c + r * ldc) : V::zero();
        acc[r][1] = accumulate ? V::load(c + r * ldc + V::width) : V::zero();
    }
    for (std::size_t k = 0; k < q; ++k) {
        const auto b0 = V::load(b + k * ldb);
        const auto b1 = V::load(b + k * ldb + V::width);
        for (std::size_t r = 0; r < R; ++r) {
            const auto av = V::set1(a[r * lda + k]);
            acc[r][0] = V::fma(av, b0, acc[r][0]);
            acc[r][1] = V::fma(av, b1, acc[r][1]);
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        V::store(c + r * ldc, acc[r][0]);
        V::store(c + r * ldc + V::width, acc[r][1]);
    }
}

// Single-vector column strip, optionally masked for the ragged tail.
template <class T, std::size_t R>
inline void nn_strip(std::size_t q, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                     std::size_t ldc, bool accumulate, std::size_t cols) {
    using V = Vec<T>;
    const auto m = V::tail_mask(cols);
    typename V::reg acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = accumulate ? V::maskload(c + r * ldc, m) : V::zero();
    for (std::size_t k = 0; k < q; ++k) {
        const auto bk = V::maskload(b + k * ldb, m);
        for (std::size_t r = 0; r < R; ++r) acc[r] = V::fma(V::set1(a[r * lda + k]), bk, acc[r]);
    }
    for (std::size_t r = 0; r < R; ++r) V::maskstore(c + r * ldc, m, acc[r]);
}

template <class T, std::size_t R>
inline void nn_rows(std::size_t q, std::size_t p, const T* a, std::size_t lda, const T* b,
                    std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    constexpr std::size_t W = Vec<T>::width;
    std::size_t j = 0;
    for (; j + 2 * W <= p; j += 2 * W) nn_tile<T, R>(q, a, lda, b + j, ldb, c + j, ldc, accumulate);
    for (; j < p; j += W) {
        const std::size_t cols = (p - j) < W ? (p - j) : W;
        nn_strip<T, R>(q, a, lda, b + j, ldb, c + j, ldc, accumulate, cols);
    }
}

template <class T>
void gemm_nn(std::size_t n, std::size_t q, std::size_t p, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) nn_rows<T, 4>(q, p, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
    for (; i < n; ++i) nn_rows<T, 1>(q, p, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

// C[q x p] += A^T B, accumulating over the n rows in ascending order.
template <class T, std::size_t R>
inline void tn_block(std::size_t n, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                     std::size_t ldc, std::size_t cols) {
    using V = Vec<T>;
    const auto m = V::tail_mask(cols);
    typename V::reg acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = V::maskload(c + r * ldc, m);
    for (std::size_t s = 0; s < n; ++s) {
        const auto bs = V::maskload(b + s * ldb, m);
        const T* as = a + s * lda;
        for (std::size_t r = 0; r < R; ++r) acc[r] = V::fma(V::set1(as[r]), bs, acc[r]);
    }
    for (std::size_t r = 0; r < R; ++r) V::maskstore(c + r * ldc, m, acc[r]);
}

template <class T>
void gemm_tn(std::size_t n, std::size_t q, std::size_t p, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    constexpr std::size_t W = Vec<T>::width;
    for (std::size_t j = 0; j < p; j += W) {
        const std::size_t cols = (p - j) < W ? (p - j) : W;
        std::size_t i = 0;
        for (; i + 8 <= q; i += 8) tn_block<T, 8>(n, a + i, lda, b + j, ldb, c + i * ldc + j, ldc, cols);
        for (; i < q; ++i) tn_block<T, 1>(n, a + i, lda, b + j, ldb, c + i * ldc + j, ldc, cols);
    }
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    using V = Vec<T>;
    const auto av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
    using V = Vec<T>;
    auto s0 = V::zero();
    auto s1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * V::width <= n; i += 2 * V::width) {
        s0 = V::fma(V::load(x + i), V::load(y + i), s0);
        s1 = V::fma(V::load(x + i + V::width), V::load(y + i + V::width), s1);
    }
    for (; i + V::width <= n; i += V::width) s0 = V::fma(V::load(x + i), V::load(y + i), s0);
    T s = V::hsum(s0) + V::hsum(s1);
    for (; i < n; ++i) s = std::fma(x[i], y[i], s);
    return s;
}

template <class T>
const KernelTable<T> kTable{&gemm_nn<T>, &gemm_tn<T>, &axpy<T>, &dot<T>, "avx2"};

}  // namespace

template <>
const KernelTable<float>* avx2_kernels<float>() {
    return &kTable<float>;
}
template <>
const KernelTable<double>* avx2_kernels<double>() {
    return &kTable<double>;
}

}  // namespace cfgat::simd
