#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops used by the network and feature code.
// A scalar reference backend always exists; an AVX2 backend is selected
// at runtime when the CPU supports it. All backends use the same
// per-element reduction order (k-outer accumulation, fused multiply-add),
// so results agree to the last few ulps and are deterministic for a
// fixed backend.
namespace psep::kernels {

struct Backend {
    const char* name;

    // C(B x N) += A(B x K) * W(K x N), all row-major.
    void (*gemm_acc)(const double* a, const double* w, double* c,
                     std::size_t b, std::size_t k, std::size_t n);
    // dW(K x N) += A^T(B x K) * dY(B x N).
    void (*gemm_at_acc)(const double* a, const double* dy, double* dw,
                        std::size_t b, std::size_t k, std::size_t n);
    // dX(B x K) = dY(B x N) * W^T(K x N).
    void (*gemm_bt)(const double* dy, const double* w, double* dx,
                    std::size_t b, std::size_t k, std::size_t n);
    // y[i] += x[i]
    void (*add)(const double* x, double* y, std::size_t n);
    // y[i] = max(x[i], 0)
    void (*relu)(const double* x, double* y, std::size_t n);
    // dx[i] = x[i] > 0 ? dy[i] : 0   (derivative at 0 defined as 0)
    void (*relu_grad)(const double* x, const double* dy, double* dx, std::size_t n);
    // y[i] = ((x[i] + pi) mod 2pi) - pi, result in [-pi, pi)
    void (*wrap)(const double* x, double* y, std::size_t n);
    // sum of squared differences
    double (*sumsq_diff)(const double* a, const double* b, std::size_t n);
};

const Backend& scalar_backend();
bool avx2_available();

// Active backend: AVX2 when compiled in and the CPU reports support,
// unless the PSEP_FORCE_SCALAR environment variable is set.
const Backend& active();

}  // namespace psep::kernels
