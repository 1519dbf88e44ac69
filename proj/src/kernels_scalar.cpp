#include "hrg/kernels.hpp"

namespace hrg::kern {
namespace {

double dot_scalar(const double* x, const double* y, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_scalar(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_scalar(const double* x, const double* y, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_scalar(const double* x, const double* y, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_scalar(const double* x, const double* y, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_scalar(double a, const double* x, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

double sum_scalar(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double max_scalar(const double* x, size_t n) {
    double m = x[0];
    for (size_t i = 1; i < n; ++i) {
        if (x[i] > m) m = x[i];
    }
    return m;
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k = {
        "scalar",    dot_scalar, axpy_scalar, add_scalar,
        sub_scalar,  mul_scalar, scale_scalar, sum_scalar,
        max_scalar,
    };
    return k;
}

}  // namespace hrg::kern
