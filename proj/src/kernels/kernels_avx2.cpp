#include "psep/kernels.hpp"

#include <cmath>
#include <immintrin.h>
#include <numbers>

namespace psep::kernels {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// C(BxN) += A(BxK) * W(KxN); k-outer keeps the per-element reduction order
// identical to the scalar backend.
void gemm_acc_avx2(const double* a, const double* w, double* c,
                   std::size_t b, std::size_t k, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* wrow = w + kk * n;
        for (std::size_t bb = 0; bb < b; ++bb) {
            const double av = a[bb * k + kk];
            if (av == 0.0) continue;
            const __m256d avv = _mm256_set1_pd(av);
            double* crow = c + bb * n;
            std::size_t nn = 0;
            for (; nn + 8 <= n; nn += 8) {
                __m256d c0 = _mm256_loadu_pd(crow + nn);
                __m256d c1 = _mm256_loadu_pd(crow + nn + 4);
                c0 = _mm256_fmadd_pd(avv, _mm256_loadu_pd(wrow + nn), c0);
                c1 = _mm256_fmadd_pd(avv, _mm256_loadu_pd(wrow + nn + 4), c1);
                _mm256_storeu_pd(crow + nn, c0);
                _mm256_storeu_pd(crow + nn + 4, c1);
            }
            for (; nn < n4; nn += 4) {
                __m256d c0 = _mm256_loadu_pd(crow + nn);
                c0 = _mm256_fmadd_pd(avv, _mm256_loadu_pd(wrow + nn), c0);
                _mm256_storeu_pd(crow + nn, c0);
            }
            for (; nn < n; ++nn) crow[nn] = std::fma(av, wrow[nn], crow[nn]);
        }
    }
}

void gemm_at_acc_avx2(const double* a, const double* dy, double* dw,
                      std::size_t b, std::size_t k, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t bb = 0; bb < b; ++bb) {
        const double* dyrow = dy + bb * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[bb * k + kk];
            if (av == 0.0) continue;
            const __m256d avv = _mm256_set1_pd(av);
            double* dwrow = dw + kk * n;
            std::size_t nn = 0;
            for (; nn < n4; nn += 4) {
                __m256d d0 = _mm256_loadu_pd(dwrow + nn);
                d0 = _mm256_fmadd_pd(avv, _mm256_loadu_pd(dyrow + nn), d0);
                _mm256_storeu_pd(dwrow + nn, d0);
            }
            for (; nn < n; ++nn) dwrow[nn] = std::fma(av, dyrow[nn], dwrow[nn]);
        }
    }
}

// dX(BxK) = dY(BxN) * W^T; k tiled so W rows stay in L1 across the batch.
void gemm_bt_avx2(const double* dy, const double* w, double* dx,
                  std::size_t b, std::size_t k, std::size_t n) {
    constexpr std::size_t kTile = 8;
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t k0 = 0; k0 < k; k0 += kTile) {
        const std::size_t k1 = std::min(k0 + kTile, k);
        for (std::size_t bb = 0; bb < b; ++bb) {
            const double* dyrow = dy + bb * n;
            for (std::size_t kk = k0; kk < k1; ++kk) {
                const double* wrow = w + kk * n;
                __m256d acc = _mm256_setzero_pd();
                std::size_t nn = 0;
                for (; nn < n4; nn += 4)
                    acc = _mm256_fmadd_pd(_mm256_loadu_pd(dyrow + nn),
                                          _mm256_loadu_pd(wrow + nn), acc);
                alignas(32) double lanes[4];
                _mm256_store_pd(lanes, acc);
                double s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]));
                for (; nn < n; ++nn) s = std::fma(dyrow[nn], wrow[nn], s);
                dx[bb * k + kk] = s;
            }
        }
    }
}

void add_avx2(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] += x[i];
}

void relu_avx2(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_avx2(const double* x, const double* dy, double* dx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
    }
    for (; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void wrap_avx2(const double* x, double* y, std::size_t n) {
    const __m256d pi = _mm256_set1_pd(kPi);
    const __m256d twopi = _mm256_set1_pd(kTwoPi);
    const __m256d inv = _mm256_set1_pd(1.0 / kTwoPi);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d xv = _mm256_loadu_pd(x + i);
        const __m256d q = _mm256_floor_pd(_mm256_mul_pd(_mm256_add_pd(xv, pi), inv));
        __m256d r = _mm256_fnmadd_pd(twopi, q, xv);
        const __m256d over = _mm256_cmp_pd(r, pi, _CMP_GE_OQ);
        r = _mm256_sub_pd(r, _mm256_and_pd(over, twopi));
        _mm256_storeu_pd(y + i, r);
    }
    for (; i < n; ++i) {
        double r = x[i] - kTwoPi * std::floor((x[i] + kPi) / kTwoPi);
        if (r >= kPi) r -= kTwoPi;
        y[i] = r;
    }
}

double sumsq_diff_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]));
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s = std::fma(d, d, s);
    }
    return s;
}

}  // namespace

const Backend& avx2_backend_impl() {
    static const Backend kAvx2 = {
        "avx2",
        gemm_acc_avx2,
        gemm_at_acc_avx2,
        gemm_bt_avx2,
        add_avx2,
        relu_avx2,
        relu_grad_avx2,
        wrap_avx2,
        sumsq_diff_avx2,
    };
    return kAvx2;
}

}  // namespace psep::kernels
