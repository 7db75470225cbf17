#include "crashbench/kernels.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace crashbench::kernels {
namespace {

double dot_ref(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_ref(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

double max_abs_ref(const double* a, std::size_t n) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(a[i]));
    return m;
}

double sq_dist_ref(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void axpy_ref(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scal_ref(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void vadd_ref(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vsub_ref(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void vmul_ref(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void gemm_nn_ref(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            const double* brow = B + p * n;
            double* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void gemm_nt_ref(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            C[i * n + j] += dot_ref(A + i * k, B + j * k, k);
}

void gemm_tn_ref(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = A + p * m;
        const double* brow = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = arow[i];
            double* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

const Backend kScalar = {
    "scalar",
    dot_ref, sum_ref, max_abs_ref, sq_dist_ref,
    axpy_ref, scal_ref, vadd_ref, vsub_ref, vmul_ref,
    gemm_nn_ref, gemm_nt_ref, gemm_tn_ref,
};

const Backend* g_active = &kScalar;
std::once_flag g_init_flag;

void select_backend() {
    const Backend* avx2 = avx2_backend();
    const char* want = std::getenv("CRASHBENCH_SIMD");
    if (want != nullptr) {
        if (std::strcmp(want, "scalar") == 0) {
            g_active = &kScalar;
            return;
        }
        if (std::strcmp(want, "avx2") == 0) {
            if (avx2 != nullptr) {
                g_active = avx2;
            } else {
                std::fprintf(stderr, "crashbench: CRASHBENCH_SIMD=avx2 unavailable, using scalar\n");
                g_active = &kScalar;
            }
            return;
        }
        std::fprintf(stderr, "crashbench: unknown CRASHBENCH_SIMD value '%s', using scalar\n", want);
        g_active = &kScalar;
        return;
    }
    g_active = (avx2 != nullptr) ? avx2 : &kScalar;
}

}  // namespace

const Backend& scalar_backend() { return kScalar; }

const Backend& active() {
    std::call_once(g_init_flag, select_backend);
    return *g_active;
}

std::string_view active_name() { return active().name; }

}  // namespace crashbench::kernels
