#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "wildtta/kernels.hpp"

using namespace wildtta::kernels;
using testing::random_values;

namespace {

std::vector<Isa> simd_isas() {
    std::vector<Isa> out;
    for (Isa isa : {Isa::Avx2, Isa::Neon})
        if (isa_available(isa)) out.push_back(isa);
    return out;
}

void require_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max(1.0, std::abs(a[i]));
        REQUIRE(std::abs(a[i] - b[i]) <= tol * scale);
    }
}

// Restores the ISA active when the test started.
struct IsaGuard {
    Isa saved = active_isa();
    ~IsaGuard() { set_isa(saved); }
};

}  // namespace

TEST_CASE("scalar ISA is always available and parseable") {
    CHECK(isa_available(Isa::Scalar));
    CHECK(parse_isa("scalar") == Isa::Scalar);
    CHECK(parse_isa("avx2") == Isa::Avx2);
    CHECK(parse_isa("neon") == Isa::Neon);
    CHECK_THROWS_AS(parse_isa("sse9"), std::invalid_argument);
    CHECK(std::string(isa_name(Isa::Scalar)) == "scalar");
}

TEST_CASE("unavailable ISA is rejected") {
    IsaGuard guard;
    for (Isa isa : {Isa::Avx2, Isa::Neon}) {
        if (!isa_available(isa)) CHECK_THROWS_AS(set_isa(isa), std::invalid_argument);
    }
}

TEST_CASE("gemm variants match the scalar reference on ragged shapes") {
    const KernelTable& ref = table(Isa::Scalar);
    for (Isa isa : simd_isas()) {
        const KernelTable& simd = table(isa);
        CAPTURE(isa_name(isa));
        std::uint64_t seed = 1;
        for (std::size_t m : {1, 2, 3, 7, 16}) {
            for (std::size_t k : {1, 4, 5, 9, 33}) {
                for (std::size_t n : {1, 3, 8, 13, 64}) {
                    const auto a = random_values(m * k, seed++);
                    const auto b = random_values(k * n, seed++);
                    const auto c0 = random_values(m * n, seed++);
                    auto c_ref = c0, c_simd = c0;
                    ref.gemm_nn(m, k, n, a.data(), b.data(), c_ref.data());
                    simd.gemm_nn(m, k, n, a.data(), b.data(), c_simd.data());
                    require_close(c_ref, c_simd, 1e-12);

                    // a[m x k]^T * g[m x n] -> [k x n]
                    const auto g = random_values(m * n, seed++);
                    std::vector<double> t_ref(k * n, 0.5), t_simd(k * n, 0.5);
                    ref.gemm_tn(m, k, n, a.data(), g.data(), t_ref.data());
                    simd.gemm_tn(m, k, n, a.data(), g.data(), t_simd.data());
                    require_close(t_ref, t_simd, 1e-12);

                    // g[m x n] * b[k x n]^T -> [m x k]
                    const auto bt = random_values(k * n, seed++);
                    std::vector<double> u_ref(m * k, -0.25), u_simd(m * k, -0.25);
                    ref.gemm_nt(m, k, n, g.data(), bt.data(), u_ref.data());
                    simd.gemm_nt(m, k, n, g.data(), bt.data(), u_simd.data());
                    require_close(u_ref, u_simd, 1e-12);
                }
            }
        }
    }
}

TEST_CASE("vector kernels match the scalar reference") {
    const KernelTable& ref = table(Isa::Scalar);
    for (Isa isa : simd_isas()) {
        const KernelTable& simd = table(isa);
        for (std::size_t n : {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 63, 100, 1001}) {
            const auto x = random_values(n, 10 + n);
            const auto y = random_values(n, 20 + n);
            CHECK(simd.dot(x.data(), y.data(), n) == doctest::Approx(ref.dot(x.data(), y.data(), n)).epsilon(1e-12));
            CHECK(simd.sum(x.data(), n) == doctest::Approx(ref.sum(x.data(), n)).epsilon(1e-12));
            CHECK(simd.sum_sq(x.data(), n) == doctest::Approx(ref.sum_sq(x.data(), n)).epsilon(1e-12));
            auto y_ref = y, y_simd = y;
            ref.axpy(-1.75, x.data(), y_ref.data(), n);
            simd.axpy(-1.75, x.data(), y_simd.data(), n);
            require_close(y_ref, y_simd, 1e-14);
        }
    }
}

TEST_CASE("gemm rows do not depend on how many rows share the call") {
    // Row i of a*b must be the same whether computed alone or within a batch,
    // so per-sample results are batch-size invariant under every ISA.
    for (Isa isa : [] {
             auto v = simd_isas();
             v.push_back(Isa::Scalar);
             return v;
         }()) {
        const KernelTable& kt = table(isa);
        const std::size_t m = 9, k = 37, n = 21;
        const auto a = random_values(m * k, 5);
        const auto b = random_values(k * n, 6);
        std::vector<double> full(m * n, 0.0);
        kt.gemm_nn(m, k, n, a.data(), b.data(), full.data());
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> row(n, 0.0);
            kt.gemm_nn(1, k, n, a.data() + i * k, b.data(), row.data());
            for (std::size_t j = 0; j < n; ++j) REQUIRE(row[j] == full[i * n + j]);
        }
    }
}

TEST_CASE("span front-ends check dimensions") {
    std::vector<double> a(6), b(6), c(4);
    CHECK_NOTHROW(gemm_nn(2, 3, 2, a, b, c));
    CHECK_THROWS_AS(gemm_nn(2, 3, 3, a, b, c), std::invalid_argument);
    std::vector<double> five(5), six(6);
    CHECK_THROWS_AS(gemm_tn(2, 3, 2, a, five, six), std::invalid_argument);
    CHECK_THROWS_AS(gemm_nt(2, 3, 2, a, b, five), std::invalid_argument);
    CHECK_THROWS_AS(dot(std::vector<double>(3), std::vector<double>(4)), std::invalid_argument);
    std::vector<double> y(2);
    CHECK_THROWS_AS(axpy(1.0, std::vector<double>(3), y), std::invalid_argument);
}

TEST_CASE("front-ends follow the active ISA") {
    IsaGuard guard;
    const auto x = random_values(257, 3);
    set_isa(Isa::Scalar);
    CHECK(active_isa() == Isa::Scalar);
    const double s_scalar = sum_sq(x);
    for (Isa isa : simd_isas()) {
        set_isa(isa);
        CHECK(active_isa() == isa);
        CHECK(sum_sq(x) == doctest::Approx(s_scalar).epsilon(1e-12));
    }
}
