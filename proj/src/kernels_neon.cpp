// NEON variants for aarch64. Same equivalence contract as the AVX2 TU:
// elementwise bitwise-equal to scalar, reductions reassociated.

#include "hrg/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

namespace hrg::kern {
namespace {

double dot_neon(const double* x, const double* y, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    }
    double total = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) total += x[i] * y[i];
    return total;
}

void axpy_neon(double a, const double* x, double* y, size_t n) {
    const float64x2_t av = vdupq_n_f64(a);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i,
                  vaddq_f64(vld1q_f64(y + i), vmulq_f64(av, vld1q_f64(x + i))));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void add_neon(const double* x, const double* y, double* out, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_neon(const double* x, const double* y, double* out, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vsubq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_neon(const double* x, const double* y, double* out, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_neon(double a, const double* x, double* out, size_t n) {
    const float64x2_t av = vdupq_n_f64(a);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(av, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) out[i] = a * x[i];
}

double sum_neon(const double* x, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        acc = vaddq_f64(acc, vld1q_f64(x + i));
    }
    double total = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) total += x[i];
    return total;
}

double max_neon(const double* x, size_t n) {
    if (n < 2) return x[0];
    float64x2_t acc = vld1q_f64(x);
    size_t i = 2;
    for (; i + 2 <= n; i += 2) {
        acc = vmaxq_f64(acc, vld1q_f64(x + i));
    }
    double m = vgetq_lane_f64(acc, 0);
    const double m1 = vgetq_lane_f64(acc, 1);
    if (m1 > m) m = m1;
    for (; i < n; ++i) {
        if (x[i] > m) m = x[i];
    }
    return m;
}

}  // namespace

const Kernels* neon_kernels() {
    static const Kernels k = {
        "neon",    dot_neon, axpy_neon, add_neon, sub_neon,
        mul_neon,  scale_neon, sum_neon, max_neon,
    };
    return &k;
}

}  // namespace hrg::kern

#else

namespace hrg::kern {
const Kernels* neon_kernels() { return nullptr; }
}  // namespace hrg::kern

#endif
