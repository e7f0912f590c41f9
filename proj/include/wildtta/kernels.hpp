#pragma once

// Dense double-precision inner loops used by the autodiff engine.
//
// Every kernel has a scalar reference implementation and, where the target
// supports it, a SIMD variant (AVX2+FMA on x86-64, NEON on AArch64). The
// variant is picked once at startup from CPU feature detection and can be
// overridden with WILDTTA_ISA=scalar|avx2|neon or set_isa().
//
// All matrices are row-major. The gemm kernels accumulate into their output.
// Results for output row i depend only on row i of the row-indexed operand,
// so a sample's activations are independent of how many rows share the call.

#include <cstddef>
#include <span>
#include <string_view>

namespace wildtta::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
    // c[m x n] += a[m x k] * b[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c);
    // c[k x n] += a[m x k]^T * b[m x n]
    void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c);
    // c[m x k] += a[m x n] * b[k x n]^T
    void (*gemm_nt)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c);
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*sum_sq)(const double* x, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
#if defined(WILDTTA_HAVE_AVX2)
const KernelTable& avx2_table() noexcept;
#endif
#if defined(WILDTTA_HAVE_NEON)
const KernelTable& neon_table() noexcept;
#endif

bool isa_available(Isa isa) noexcept;
const KernelTable& table(Isa isa);

Isa active_isa() noexcept;
// Throws std::invalid_argument when the ISA is not available on this host.
void set_isa(Isa isa);
Isa parse_isa(std::string_view name);

// Span front-ends over the active table. Dimensions are checked.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
double dot(std::span<const double> x, std::span<const double> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double sum(std::span<const double> x);
double sum_sq(std::span<const double> x);

}  // namespace wildtta::kernels
