#include "psep/kernels.hpp"

#include <cmath>
#include <numbers>

namespace psep::kernels {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

void gemm_acc_scalar(const double* a, const double* w, double* c,
                     std::size_t b, std::size_t k, std::size_t n) {
    // k-outer so each c row accumulates in ascending-k order with fused ops,
    // matching the vector backends element for element.
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* wrow = w + kk * n;
        for (std::size_t bb = 0; bb < b; ++bb) {
            const double av = a[bb * k + kk];
            double* crow = c + bb * n;
            for (std::size_t nn = 0; nn < n; ++nn)
                crow[nn] = std::fma(av, wrow[nn], crow[nn]);
        }
    }
}

void gemm_at_acc_scalar(const double* a, const double* dy, double* dw,
                        std::size_t b, std::size_t k, std::size_t n) {
    for (std::size_t bb = 0; bb < b; ++bb) {
        const double* dyrow = dy + bb * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[bb * k + kk];
            if (av == 0.0) continue;
            double* dwrow = dw + kk * n;
            for (std::size_t nn = 0; nn < n; ++nn)
                dwrow[nn] = std::fma(av, dyrow[nn], dwrow[nn]);
        }
    }
}

void gemm_bt_scalar(const double* dy, const double* w, double* dx,
                    std::size_t b, std::size_t k, std::size_t n) {
    for (std::size_t bb = 0; bb < b; ++bb) {
        const double* dyrow = dy + bb * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* wrow = w + kk * n;
            double acc = 0.0;
            for (std::size_t nn = 0; nn < n; ++nn)
                acc = std::fma(dyrow[nn], wrow[nn], acc);
            dx[bb * k + kk] = acc;
        }
    }
}

void add_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void relu_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_scalar(const double* x, const double* dy, double* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void wrap_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        double r = x[i] - kTwoPi * std::floor((x[i] + kPi) / kTwoPi);
        if (r >= kPi) r -= kTwoPi;  // guard against rounding onto +pi
        y[i] = r;
    }
}

double sumsq_diff_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc = std::fma(d, d, acc);
    }
    return acc;
}

const Backend kScalar = {
    "scalar",
    gemm_acc_scalar,
    gemm_at_acc_scalar,
    gemm_bt_scalar,
    add_scalar,
    relu_scalar,
    relu_grad_scalar,
    wrap_scalar,
    sumsq_diff_scalar,
};

}  // namespace

const Backend& scalar_backend() { return kScalar; }

}  // namespace psep::kernels
