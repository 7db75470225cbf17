#pragma once
#include <cstddef>
#include <string_view>

// Small dense f64 kernels used by the solver, the surrogate autodiff and the
// space-filling samplers. A scalar reference backend always exists; on x86_64
// an AVX2/FMA backend is selected at process start when the CPU supports it.
// Set CRASHBENCH_SIMD=scalar|avx2 to force a backend (avx2 falls back to
// scalar with a warning when unsupported).

namespace crashbench::kernels {

struct Backend {
    const char* name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    double (*max_abs)(const double* a, std::size_t n);
    double (*sq_dist)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    void (*scal)(double alpha, double* x, std::size_t n);
    void (*vadd)(const double* a, const double* b, double* out, std::size_t n);
    void (*vsub)(const double* a, const double* b, double* out, std::size_t n);
    void (*vmul)(const double* a, const double* b, double* out, std::size_t n);
    // Row-major matrix products, accumulating into C (caller zeroes C first
    // when needed): nn: C[m,n] += A[m,k]*B[k,n]; nt: C[m,n] += A[m,k]*B[n,k];
    // tn: C[m,n] += A[k,m]*B[k,n].
    void (*gemm_nn)(const double* A, const double* B, double* C,
                    std::size_t m, std::size_t k, std::size_t n);
    void (*gemm_nt)(const double* A, const double* B, double* C,
                    std::size_t m, std::size_t k, std::size_t n);
    void (*gemm_tn)(const double* A, const double* B, double* C,
                    std::size_t m, std::size_t k, std::size_t n);
};

const Backend& scalar_backend();
const Backend* avx2_backend();  // nullptr when not compiled in or unsupported
const Backend& active();        // backend selected at startup
std::string_view active_name();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline double sum(const double* a, std::size_t n) { return active().sum(a, n); }
inline double max_abs(const double* a, std::size_t n) { return active().max_abs(a, n); }
inline double sq_dist(const double* a, const double* b, std::size_t n) { return active().sq_dist(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void scal(double alpha, double* x, std::size_t n) { active().scal(alpha, x, n); }
inline void vadd(const double* a, const double* b, double* out, std::size_t n) { active().vadd(a, b, out, n); }
inline void vsub(const double* a, const double* b, double* out, std::size_t n) { active().vsub(a, b, out, n); }
inline void vmul(const double* a, const double* b, double* out, std::size_t n) { active().vmul(a, b, out, n); }
inline void gemm_nn(const double* A, const double* B, double* C,
                    std::size_t m, std::size_t k, std::size_t n) { active().gemm_nn(A, B, C, m, k, n); }
inline void gemm_nt(const double* A, const double* B, double* C,
                    std::size_t m, std::size_t k, std::size_t n) { active().gemm_nt(A, B, C, m, k, n); }
inline void gemm_tn(const double* A, const double* B, double* C,
                    std::size_t m, std::size_t k, std::size_t n) { active().gemm_tn(A, B, C, m, k, n); }

}  // namespace crashbench::kernels
