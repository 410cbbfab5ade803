#pragma once

#include <functional>
#include <string>
#include <vector>

#include "psep/common.hpp"

namespace psep {

// Continuous-time signal sampled on demand.
using SignalFn = std::function<cplx(double)>;

struct TfGrid {
    std::vector<double> times;   // seconds
    std::vector<double> omegas;  // rad/s
    double lambda = 0.02;        // gaussian window width, seconds
    double fd_time_step = 1e-4;      // centered-difference step in t
    double fd_omega_step = 0.5;      // centered-difference step in omega
    double quad_oversampling = 8.0;  // quadrature nodes per max-frequency period

    void validate() const;
    static TfGrid uniform(double t0, double t1, std::size_t nt, double w0, double w1,
                          std::size_t nw, double lambda);
};

struct RelationReport {
    // one row per masked grid point
    std::vector<double> omega, t;
    std::vector<double> residual_a, residual_b;  // relative residuals
    double mask_threshold = 0.01;                // fraction of max amplitude
    double median_residual_a = 0.0;
    double median_residual_b = 0.0;
    std::size_t masked_points = 0;
};

// Gaussian-window continuous STFT via trapezoidal quadrature, with the
// symmetric-convention modulation factor e^{j w t / 2}. Window truncated
// at +-6 lambda.
cplx gaussian_stft_point(const SignalFn& signal, double omega, double t, const TfGrid& grid);

// matrix over (omega, t): row = omega index, col = time index
std::vector<std::vector<cplx>> gaussian_stft_grid(const SignalFn& signal, const TfGrid& grid);

// Centered finite-difference residuals of the two phase/log-amplitude
// relations; phase differences are wrapped before division.
RelationReport relation_residual(const SignalFn& signal, const TfGrid& grid,
                                 double mask_threshold = 0.01);

void write_relation_csv(const std::string& path, const RelationReport& report);

}  // namespace psep
