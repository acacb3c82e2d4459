#pragma once
// Dense arithmetic kernels with a scalar reference path and an AVX2/FMA path
// chosen once at runtime. All matrices are row-major with explicit leading
// dimensions; every GEMM accumulates into C.

#include <cstddef>
#include <string_view>

namespace crackseg::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
    Isa isa;
    // C[M x N] += A[M x K] * B[K x N]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    // C[M x N] += A[K x M]^T * B[K x N]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    // C[M x N] += A[M x K] * B[N x K]^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    // y += alpha * x
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
    double (*dot)(std::size_t n, const double* x, const double* y);
};

const KernelTable& scalar_kernels();
// nullptr when the AVX2 translation unit was not built or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

/// Best ISA supported by this CPU, honouring the CRACKSEG_ISA environment
/// variable ("scalar" or "avx2") when set.
Isa detect_isa();

/// Table used by all numeric code. Fixed at first use unless overridden.
const KernelTable& active();

/// Force a specific path (tests, benchmarks). Throws if unavailable.
void set_active(Isa isa);

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    active().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    active().gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    active().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
    active().axpy(n, alpha, x, y);
}
inline double dot(std::size_t n, const double* x, const double* y) {
    return active().dot(n, x, y);
}

}  // namespace crackseg::kernels
