#pragma once
// Dense inner-loop kernels with a scalar reference and an AVX2/FMA variant.
//
// All matrices are row-major with explicit leading dimensions. Every kernel
// accumulates each output element over the reduction index in ascending
// order, so an element's value never depends on how rows are blocked.

#include <cstddef>
#include <string_view>

namespace cfgat::simd {

template <class T>
struct KernelTable {
    // C[n x p] (+)= A[n x q] * B[q x p]
    void (*gemm_nn)(std::size_t n, std::size_t q, std::size_t p, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    // C[q x p] += A[n x q]^T * B[n x p]
    void (*gemm_tn)(std::size_t n, std::size_t q, std::size_t p, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc);
    // y += alpha * x
    void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
    T (*dot)(std::size_t n, const T* x, const T* y);
    const char* name;
};

enum class Isa { Scalar, Avx2 };

template <class T>
const KernelTable<T>& scalar_kernels();

/// nullptr when the AVX2 variant was not compiled in.
template <class T>
const KernelTable<T>* avx2_kernels();

/// True when the running CPU reports AVX2 and FMA.
bool cpu_has_avx2();

/// Selected once at first use: AVX2 when available, unless the environment
/// variable CFGAT_SIMD=scalar is set. Can be overridden with force_isa().
template <class T>
const KernelTable<T>& kernels();

Isa active_isa();
void force_isa(Isa isa);
std::string_view isa_name(Isa isa);

}  // namespace cfgat::simd
