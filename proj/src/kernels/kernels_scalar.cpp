#include "wildtta/kernels.hpp"

namespace wildtta::kernels {
namespace {

void gemm_nn_scalar(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aip * brow[j];
            }
        }
    }
}

void gemm_tn_scalar(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aip * brow[j];
            }
        }
    }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

void gemm_nt_scalar(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            c[i * k + p] += dot_scalar(a + i * n, b + p * n, n);
        }
    }
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

double sum_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += x[i];
    }
    return acc;
}

double sum_sq_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += x[i] * x[i];
    }
    return acc;
}

}  // namespace

const KernelTable& scalar_table() noexcept {
    static const KernelTable t{gemm_nn_scalar, gemm_tn_scalar, gemm_nt_scalar, dot_scalar,
                               axpy_scalar,    sum_scalar,     sum_sq_scalar};
    return t;
}

}  // namespace wildtta::kernels
