#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "hrg/kernels.hpp"
#include "hrg/rng.hpp"

using hrg::Rng;
using hrg::kern::Kernels;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double sd = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, sd);
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Every variant against the scalar reference. Elementwise ops must match
// bitwise; reductions reassociate, so they get a tight tolerance instead.
void check_equivalence(const Kernels& ref, const Kernels& alt) {
    Rng rng(2024);
    const size_t sizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 15, 16, 33, 100, 1001};
    for (size_t n : sizes) {
        const std::vector<double> x = random_vec(rng, n);
        const std::vector<double> y = random_vec(rng, n);
        const double a = rng.normal();

        std::vector<double> out_ref(n), out_alt(n);
        ref.add(x.data(), y.data(), out_ref.data(), n);
        alt.add(x.data(), y.data(), out_alt.data(), n);
        CHECK(bitwise_equal(out_ref, out_alt));

        ref.sub(x.data(), y.data(), out_ref.data(), n);
        alt.sub(x.data(), y.data(), out_alt.data(), n);
        CHECK(bitwise_equal(out_ref, out_alt));

        ref.mul(x.data(), y.data(), out_ref.data(), n);
        alt.mul(x.data(), y.data(), out_alt.data(), n);
        CHECK(bitwise_equal(out_ref, out_alt));

        ref.scale(a, x.data(), out_ref.data(), n);
        alt.scale(a, x.data(), out_alt.data(), n);
        CHECK(bitwise_equal(out_ref, out_alt));

        std::vector<double> acc_ref = y, acc_alt = y;
        ref.axpy(a, x.data(), acc_ref.data(), n);
        alt.axpy(a, x.data(), acc_alt.data(), n);
        CHECK(bitwise_equal(acc_ref, acc_alt));

        if (n > 0) {
            const double dot_ref = ref.dot(x.data(), y.data(), n);
            const double dot_alt = alt.dot(x.data(), y.data(), n);
            CHECK(std::abs(dot_ref - dot_alt) <=
                  1e-13 * std::max(1.0, std::abs(dot_ref)) * static_cast<double>(n));

            const double sum_ref = ref.sum(x.data(), n);
            const double sum_alt = alt.sum(x.data(), n);
            CHECK(std::abs(sum_ref - sum_alt) <=
                  1e-13 * std::max(1.0, std::abs(sum_ref)) * static_cast<double>(n));

            CHECK(ref.max(x.data(), n) == alt.max(x.data(), n));
        }
    }
}

}  // namespace

TEST_CASE("scalar kernels basic identities") {
    const Kernels& k = hrg::kern::scalar_kernels();
    const std::vector<double> x = {1.0, 2.0, 3.0};
    const std::vector<double> y = {4.0, -5.0, 6.0};
    CHECK(k.dot(x.data(), y.data(), 3) == doctest::Approx(1.0 * 4 - 10 + 18));
    CHECK(k.sum(x.data(), 3) == 6.0);
    CHECK(k.max(y.data(), 3) == 6.0);
    std::vector<double> acc = y;
    k.axpy(2.0, x.data(), acc.data(), 3);
    CHECK(acc[0] == 6.0);
    CHECK(acc[1] == -1.0);
    CHECK(acc[2] == 12.0);
}

TEST_CASE("avx2 kernels match scalar reference") {
    const Kernels* avx2 = hrg::kern::avx2_kernels();
    if (avx2 == nullptr) return;  // CPU without AVX2
    check_equivalence(hrg::kern::scalar_kernels(), *avx2);
}

TEST_CASE("neon kernels match scalar reference") {
    const Kernels* neon = hrg::kern::neon_kernels();
    if (neon == nullptr) return;  // not aarch64
    check_equivalence(hrg::kern::scalar_kernels(), *neon);
}

TEST_CASE("active kernel table is resolved and usable") {
    const Kernels& k = hrg::kern::active();
    CHECK(k.name != nullptr);
    const std::vector<double> x = {1.0, 1.0, 1.0, 1.0, 1.0};
    CHECK(k.sum(x.data(), 5) == 5.0);
}
