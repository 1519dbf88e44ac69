#pragma once

#include <cstddef>

namespace hrg::kern {

// Scalar reference kernels plus SIMD variants selected once at startup.
//
// Equivalence contract, checked by tests/test_kernels.cpp:
//   - elementwise kernels (axpy/add/sub/mul/scale) are bitwise identical to
//     the scalar reference: same per-element operation order, no FMA
//     contraction (all kernel TUs build with -ffp-contract=off);
//   - reductions (dot/sum) may reassociate and are tolerance-tested;
//   - max is bitwise identical (order-independent on finite input).
struct Kernels {
    const char* name;
    double (*dot)(const double* x, const double* y, size_t n);
    void (*axpy)(double a, const double* x, double* y, size_t n);  // y += a*x
    void (*add)(const double* x, const double* y, double* out, size_t n);
    void (*sub)(const double* x, const double* y, double* out, size_t n);
    void (*mul)(const double* x, const double* y, double* out, size_t n);
    void (*scale)(double a, const double* x, double* out, size_t n);
    double (*sum)(const double* x, size_t n);
    double (*max)(const double* x, size_t n);  // n >= 1
};

const Kernels& scalar_kernels();

// Null when the ISA is absent at compile time or the CPU lacks it at runtime.
const Kernels* avx2_kernels();
const Kernels* neon_kernels();

// Active table: best available variant, overridable with
// HRG_KERNELS={auto,scalar,avx2,neon}. Resolved once; stable for the process.
const Kernels& active();

}  // namespace hrg::kern
