// Compiled with -mavx2 -mfma. Only reached through the dispatcher after the
// host has been checked for both features.
#include "wildtta/kernels.hpp"

#include <immintrin.h>

namespace wildtta::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// y[0..n) += alpha * x[0..n)
inline void axpy_row(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        __m256d y0 = _mm256_loadu_pd(y + j);
        __m256d y1 = _mm256_loadu_pd(y + j + 4);
        y0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j), y0);
        y1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j + 4), y1);
        _mm256_storeu_pd(y + j, y0);
        _mm256_storeu_pd(y + j + 4, y1);
    }
    for (; j + 4 <= n; j += 4) {
        _mm256_storeu_pd(y + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j), _mm256_loadu_pd(y + j)));
    }
    for (; j < n; ++j) {
        y[j] += alpha * x[j];
    }
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

void gemm_nn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            axpy_row(a[i * k + p], b + p * n, crow, n);
        }
    }
}

void gemm_tn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            axpy_row(a[i * k + p], brow, c + p * n, n);
        }
    }
}

void gemm_nt_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            c[i * k + p] += dot_avx2(a + i * n, b + p * n, n);
        }
    }
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    axpy_row(alpha, x, y, n);
}

double sum_avx2(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        acc += x[i];
    }
    return acc;
}

double sum_sq_avx2(const double* x, std::size_t n) {
    return dot_avx2(x, x, n);
}

}  // namespace

const KernelTable& avx2_table() noexcept {
    static const KernelTable t{gemm_nn_avx2, gemm_tn_avx2, gemm_nt_avx2, dot_avx2,
                               axpy_avx2,    sum_avx2,     sum_sq_avx2};
    return t;
}

}  // namespace wildtta::kernels
