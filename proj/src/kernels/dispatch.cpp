#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "wildtta/kernels.hpp"

namespace wildtta::kernels {
namespace {

bool host_has_avx2() noexcept {
#if defined(WILDTTA_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa detect() noexcept {
    if (const char* env = std::getenv("WILDTTA_ISA")) {
        try {
            const Isa requested = parse_isa(env);
            if (isa_available(requested)) {
                return requested;
            }
        } catch (const std::invalid_argument&) {
        }
    }
    if (isa_available(Isa::Avx2)) {
        return Isa::Avx2;
    }
    if (isa_available(Isa::Neon)) {
        return Isa::Neon;
    }
    return Isa::Scalar;
}

std::atomic<Isa>& current() noexcept {
    static std::atomic<Isa> isa{detect()};
    return isa;
}

void check(bool ok, const char* what) {
    if (!ok) {
        throw std::invalid_argument(std::string("kernels: ") + what);
    }
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::Avx2:
            return "avx2";
        case Isa::Neon:
            return "neon";
        case Isa::Scalar:
            break;
    }
    return "scalar";
}

Isa parse_isa(std::string_view name) {
    if (name == "scalar") return Isa::Scalar;
    if (name == "avx2") return Isa::Avx2;
    if (name == "neon") return Isa::Neon;
    throw std::invalid_argument("kernels: unknown ISA '" + std::string(name) + "'");
}

bool isa_available(Isa isa) noexcept {
    switch (isa) {
        case Isa::Scalar:
            return true;
        case Isa::Avx2:
            return host_has_avx2();
        case Isa::Neon:
#if defined(WILDTTA_HAVE_NEON)
            return true;
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& table(Isa isa) {
    check(isa_available(isa), "requested ISA is not available on this host");
    switch (isa) {
#if defined(WILDTTA_HAVE_AVX2)
        case Isa::Avx2:
            return avx2_table();
#endif
#if defined(WILDTTA_HAVE_NEON)
        case Isa::Neon:
            return neon_table();
#endif
        default:
            return scalar_table();
    }
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
    check(isa_available(isa), "requested ISA is not available on this host");
    current().store(isa, std::memory_order_relaxed);
}

namespace {
const KernelTable& active() { return table(active_isa()); }
}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    check(a.size() == m * k && b.size() == k * n && c.size() == m * n, "gemm_nn dimension mismatch");
    active().gemm_nn(m, k, n, a.data(), b.data(), c.data());
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    check(a.size() == m * k && b.size() == m * n && c.size() == k * n, "gemm_tn dimension mismatch");
    active().gemm_tn(m, k, n, a.data(), b.data(), c.data());
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    check(a.size() == m * n && b.size() == k * n && c.size() == m * k, "gemm_nt dimension mismatch");
    active().gemm_nt(m, k, n, a.data(), b.data(), c.data());
}

double dot(std::span<const double> x, std::span<const double> y) {
    check(x.size() == y.size(), "dot length mismatch");
    return active().dot(x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    check(x.size() == y.size(), "axpy length mismatch");
    active().axpy(alpha, x.data(), y.data(), x.size());
}

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

double sum_sq(std::span<const double> x) { return active().sum_sq(x.data(), x.size()); }

}  // namespace wildtta::kernels
