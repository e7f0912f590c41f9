#include "wildtta/kernels.hpp"

#include <arm_neon.h>

namespace wildtta::kernels {
namespace {

inline void axpy_row(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        float64x2_t y0 = vld1q_f64(y + j);
        float64x2_t y1 = vld1q_f64(y + j + 2);
        y0 = vfmaq_f64(y0, va, vld1q_f64(x + j));
        y1 = vfmaq_f64(y1, va, vld1q_f64(x + j + 2));
        vst1q_f64(y + j, y0);
        vst1q_f64(y + j + 2, y1);
    }
    for (; j < n; ++j) {
        y[j] += alpha * x[j];
    }
}

double dot_neon(const double* x, const double* y, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
    }
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

void gemm_nn_neon(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            axpy_row(a[i * k + p], b + p * n, c + i * n, n);
        }
    }
}

void gemm_tn_neon(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            axpy_row(a[i * k + p], b + i * n, c + p * n, n);
        }
    }
}

void gemm_nt_neon(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            c[i * k + p] += dot_neon(a + i * n, b + p * n, n);
        }
    }
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    axpy_row(alpha, x, y, n);
}

double sum_neon(const double* x, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vaddq_f64(acc0, vld1q_f64(x + i));
        acc1 = vaddq_f64(acc1, vld1q_f64(x + i + 2));
    }
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) {
        acc += x[i];
    }
    return acc;
}

double sum_sq_neon(const double* x, std::size_t n) {
    return dot_neon(x, x, n);
}

}  // namespace

const KernelTable& neon_table() noexcept {
    static const KernelTable t{gemm_nn_neon, gemm_tn_neon, gemm_nt_neon, dot_neon,
                               axpy_neon,    sum_neon,     sum_sq_neon};
    return t;
}

}  // namespace wildtta::kernels
