// Compiled with -mavx2 -mfma. Only reached through avx2_kernels(), which
// checks CPU support before handing out this table.

#include "crackseg/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <cmath>

namespace crackseg::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

template <bool TransA>
inline double a_at(const double* a, std::size_t lda, std::size_t i, std::size_t p) {
    if constexpr (TransA) {
        return a[p * lda + i];
    } else {
        return a[i * lda + p];
    }
}

// C += op(A) * B, register-blocked 4 rows x 8 columns. The column panel is
// the outer loop so one K x 8 slice of B stays cache-resident across rows.
template <bool TransA>
void gemm_xn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    const std::size_t m4 = m & ~std::size_t{3};
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        for (std::size_t i = 0; i < m4; i += 4) {
            double* c0 = c + i * ldc + j;
            double* c1 = c0 + ldc;
            double* c2 = c1 + ldc;
            double* c3 = c2 + ldc;
            __m256d r00 = _mm256_loadu_pd(c0), r01 = _mm256_loadu_pd(c0 + 4);
            __m256d r10 = _mm256_loadu_pd(c1), r11 = _mm256_loadu_pd(c1 + 4);
            __m256d r20 = _mm256_loadu_pd(c2), r21 = _mm256_loadu_pd(c2 + 4);
            __m256d r30 = _mm256_loadu_pd(c3), r31 = _mm256_loadu_pd(c3 + 4);
            for (std::size_t p = 0; p < k; ++p) {
                const double* bp = b + p * ldb + j;
                const __m256d b0 = _mm256_loadu_pd(bp);
                const __m256d b1 = _mm256_loadu_pd(bp + 4);
                __m256d av = _mm256_set1_pd(a_at<TransA>(a, lda, i, p));
                r00 = _mm256_fmadd_pd(av, b0, r00);
                r01 = _mm256_fmadd_pd(av, b1, r01);
                av = _mm256_set1_pd(a_at<TransA>(a, lda, i + 1, p));
                r10 = _mm256_fmadd_pd(av, b0, r10);
                r11 = _mm256_fmadd_pd(av, b1, r11);
                av = _mm256_set1_pd(a_at<TransA>(a, lda, i + 2, p));
                r20 = _mm256_fmadd_pd(av, b0, r20);
                r21 = _mm256_fmadd_pd(av, b1, r21);
                av = _mm256_set1_pd(a_at<TransA>(a, lda, i + 3, p));
                r30 = _mm256_fmadd_pd(av, b0, r30);
                r31 = _mm256_fmadd_pd(av, b1, r31);
            }
            _mm256_storeu_pd(c0, r00);
            _mm256_storeu_pd(c0 + 4, r01);
            _mm256_storeu_pd(c1, r10);
            _mm256_storeu_pd(c1 + 4, r11);
            _mm256_storeu_pd(c2, r20);
            _mm256_storeu_pd(c2 + 4, r21);
            _mm256_storeu_pd(c3, r30);
            _mm256_storeu_pd(c3 + 4, r31);
        }
        for (std::size_t i = m4; i < m; ++i) {
            double* ci = c + i * ldc + j;
            __m256d r0 = _mm256_loadu_pd(ci), r1 = _mm256_loadu_pd(ci + 4);
            for (std::size_t p = 0; p < k; ++p) {
                const double* bp = b + p * ldb + j;
                const __m256d av = _mm256_set1_pd(a_at<TransA>(a, lda, i, p));
                r0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp), r0);
                r1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4), r1);
            }
            _mm256_storeu_pd(ci, r0);
            _mm256_storeu_pd(ci + 4, r1);
        }
    }
    for (; j + 4 <= n; j += 4) {
        for (std::size_t i = 0; i < m; ++i) {
            double* ci = c + i * ldc + j;
            __m256d r0 = _mm256_loadu_pd(ci);
            for (std::size_t p = 0; p < k; ++p) {
                const __m256d av = _mm256_set1_pd(a_at<TransA>(a, lda, i, p));
                r0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + j), r0);
            }
            _mm256_storeu_pd(ci, r0);
        }
    }
    for (; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
            double s = c[i * ldc + j];
            for (std::size_t p = 0; p < k; ++p) s = std::fma(a_at<TransA>(a, lda, i, p), b[p * ldb + j], s);
            c[i * ldc + j] = s;
        }
    }
}

void gemm_nn_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    gemm_xn<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_tn_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    gemm_xn<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

// C += A * B^T as blocked dot products: one row of A against four rows of B.
void gemm_nt_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    const std::size_t k4 = k & ~std::size_t{3};
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * lda;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = b + j * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            for (std::size_t p = 0; p < k4; p += 4) {
                const __m256d av = _mm256_loadu_pd(ai + p);
                s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
                s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
                s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
                s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
            }
            double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
            for (std::size_t p = k4; p < k; ++p) {
                t0 = std::fma(ai[p], b0[p], t0);
                t1 = std::fma(ai[p], b1[p], t1);
                t2 = std::fma(ai[p], b2[p], t2);
                t3 = std::fma(ai[p], b3[p], t3);
            }
            double* ci = c + i * ldc + j;
            ci[0] += t0;
            ci[1] += t1;
            ci[2] += t2;
            ci[3] += t3;
        }
        for (; j < n; ++j) {
            const double* bj = b + j * ldb;
            __m256d s = _mm256_setzero_pd();
            for (std::size_t p = 0; p < k4; p += 4)
                s = _mm256_fmadd_pd(_mm256_loadu_pd(ai + p), _mm256_loadu_pd(bj + p), s);
            double t = hsum(s);
            for (std::size_t p = k4; p < k; ++p) t = std::fma(ai[p], bj[p], t);
            c[i * ldc + j] += t;
        }
    }
}

void axpy_impl(std::size_t n, double alpha, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    // Unfused multiply-add so results match the scalar path bit for bit.
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(av, _mm256_loadu_pd(x + i)), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_impl(std::size_t n, const double* x, const double* y) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
    }
    double t = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) t = std::fma(x[i], y[i], t);
    return t;
}

}  // namespace

const KernelTable* avx2_kernels_unchecked() {
    static const KernelTable table{Isa::avx2, gemm_nn_impl, gemm_tn_impl, gemm_nt_impl, axpy_impl, dot_impl};
    return &table;
}

}  // namespace crackseg::kernels

#else

namespace crackseg::kernels {
const KernelTable* avx2_kernels_unchecked() { return nullptr; }
}  // namespace crackseg::kernels

#endif
