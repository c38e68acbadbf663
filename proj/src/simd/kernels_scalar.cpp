#include "cfgat/simd/kernels.hpp"

namespace cfgat::simd {
namespace {

template <class T>
void gemm_nn(std::size_t n, std::size_t q, std::size_t p, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < n; ++i) {
        T* ci = c + i * ldc;
        if (!accumulate) {
            for (std::size_t j = 0; j < p; ++j) ci[j] = T(0);
        }
        const T* ai = a + i * lda;
        for (std::size_t k = 0; k < q; ++k) {
            const T aik = ai[k];
            const T* bk = b + k * ldb;
            for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
        }
    }
}

template <class T>
void gemm_tn(std::size_t n, std::size_t q, std::size_t p, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t r = 0; r < n; ++r) {
        const T* ar = a + r * lda;
        const T* br = b + r * ldb;
        for (std::size_t i = 0; i < q; ++i) {
            const T ari = ar[i];
            T* ci = c + i * ldc;
            for (std::size_t j = 0; j < p; ++j) ci[j] += ari * br[j];
        }
    }
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

template <class T>
const KernelTable<T> kTable{&gemm_nn<T>, &gemm_tn<T>, &axpy<T>, &dot<T>, "scalar"};

}  // namespace

template <>
const KernelTable<float>& scalar_kernels<float>() {
    return kTable<float>;
}
template <>
const KernelTable<double>& scalar_kernels<double>() {
    return kTable<double>;
}

}  // namespace cfgat::simd
