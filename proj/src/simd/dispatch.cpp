#include <atomic>
#include <cstdlib>
#include <cstring>

#include "cfgat/simd/kernels.hpp"

namespace cfgat::simd {

#ifndef CFGAT_HAVE_AVX2
template <>
const KernelTable<float>* avx2_kernels<float>() {
    return nullptr;
}
template <>
const KernelTable<double>* avx2_kernels<double>() {
    return nullptr;
}
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    static const bool has = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return has;
#else
    return false;
#endif
}

namespace {

Isa detect() {
    if (const char* env = std::getenv("CFGAT_SIMD"); env && std::strcmp(env, "scalar") == 0) {
        return Isa::Scalar;
    }
    if (cpu_has_avx2() && avx2_kernels<double>() != nullptr) return Isa::Avx2;
    return Isa::Scalar;
}

std::atomic<Isa>& current() {
    static std::atomic<Isa> isa{detect()};
    return isa;
}

}  // namespace

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
    if (isa == Isa::Avx2 && !(cpu_has_avx2() && avx2_kernels<double>())) isa = Isa::Scalar;
    current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

template <class T>
const KernelTable<T>& kernels() {
    if (active_isa() == Isa::Avx2) return *avx2_kernels<T>();
    return scalar_kernels<T>();
}

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace cfgat::simd
