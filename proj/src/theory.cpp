#include "psep/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "psep/phase_features.hpp"

namespace psep {
namespace {

constexpr double kPi = std::numbers::pi;

double median(std::vector<double> v) {
    if (v.empty()) throw Error("median: empty");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double quad_step(const TfGrid& grid) {
    double wmax = 0.0;
    for (double w : grid.omegas) wmax = std::max(wmax, std::abs(w));
    wmax = std::max(wmax, 1.0);
    const double by_freq = 2.0 * kPi / (wmax * grid.quad_oversampling);
    return std::min(by_freq, grid.lambda / 10.0);
}

}  // namespace

void TfGrid::validate() const {
    if (lambda <= 0.0) throw Error("TfGrid: lambda must be positive");
    if (times.empty() || omegas.empty()) throw Error("TfGrid: empty grid");
    if (fd_time_step <= 0.0 || fd_omega_step <= 0.0) throw Error("TfGrid: bad FD steps");
    if (quad_oversampling < 4.0) throw Error("TfGrid: oversampling factor must be >= 4");
}

TfGrid TfGrid::uniform(double t0, double t1, std::size_t nt, double w0, double w1,
                       std::size_t nw, double lambda) {
    TfGrid g;
    g.lambda = lambda;
    g.times.resize(nt);
    for (std::size_t i = 0; i < nt; ++i)
        g.times[i] = t0 + (t1 - t0) * double(i) / double(nt > 1 ? nt - 1 : 1);
    g.omegas.resize(nw);
    for (std::size_t i = 0; i < nw; ++i)
        g.omegas[i] = w0 + (w1 - w0) * double(i) / double(nw > 1 ? nw - 1 : 1);
    return g;
}

cplx gaussian_stft_point(const SignalFn& signal, double omega, double t, const TfGrid& grid) {
    const double lam = grid.lambda;
    const double norm = std::pow(lam, -0.5) * std::pow(kPi, -0.25);
    const double du = quad_step(grid);
    const double u0 = t - 6.0 * lam;
    const double u1 = t + 6.0 * lam;
    const auto steps = std::size_t(std::ceil((u1 - u0) / du));

    cplx acc{};
    for (std::size_t i = 0; i <= steps; ++i) {
        const double u = u0 + (u1 - u0) * double(i) / double(steps);
        const double d = t - u;
        const double h = norm * std::exp(-d * d / (2.0 * lam * lam));
        const cplx val = signal(u) * h * std::polar(1.0, -omega * u);
        acc += (i == 0 || i == steps) ? 0.5 * val : val;
    }
    acc *= (u1 - u0) / double(steps);
    return std::polar(1.0, omega * t / 2.0) * acc;
}

std::vector<std::vector<cplx>> gaussian_stft_grid(const SignalFn& signal, const TfGrid& grid) {
    grid.validate();
    std::vector<std::vector<cplx>> out(grid.omegas.size(),
                                       std::vector<cplx>(grid.times.size()));
    for (std::size_t wi = 0; wi < grid.omegas.size(); ++wi)
        for (std::size_t ti = 0; ti < grid.times.size(); ++ti)
            out[wi][ti] = gaussian_stft_point(signal, grid.omegas[wi], grid.times[ti], grid);
    return out;
}

RelationReport relation_residual(const SignalFn& signal, const TfGrid& grid,
                                 double mask_threshold) {
    grid.validate();
    const double lam = grid.lambda;
    const double dt = grid.fd_time_step;
    const double dw = grid.fd_omega_step;

    const auto center = gaussian_stft_grid(signal, grid);
    double max_amp = 0.0;
    for (const auto& row : center)
        for (const cplx& z : row) max_amp = std::max(max_amp, std::abs(z));
    if (max_amp <= 0.0) throw Error("relation_residual: signal is zero on the grid");

    RelationReport report;
    report.mask_threshold = mask_threshold;
    const double cutoff = mask_threshold * max_amp;

    for (std::size_t wi = 0; wi < grid.omegas.size(); ++wi) {
        const double w = grid.omegas[wi];
        for (std::size_t ti = 0; ti < grid.times.size(); ++ti) {
            const double t = grid.times[ti];
            if (std::abs(center[wi][ti]) <= cutoff) continue;

            const cplx xtp = gaussian_stft_point(signal, w, t + dt, grid);
            const cplx xtm = gaussian_stft_point(signal, w, t - dt, grid);
            const cplx xwp = gaussian_stft_point(signal, w + dw, t, grid);
            const cplx xwm = gaussian_stft_point(signal, w - dw, t, grid);
            const double floor_amp = 1e-300;
            if (std::abs(xtp) < floor_amp || std::abs(xtm) < floor_amp ||
                std::abs(xwp) < floor_amp || std::abs(xwm) < floor_amp)
                continue;

            const double dphi_dt = wrap(std::arg(xtp) - std::arg(xtm)) / (2.0 * dt);
            const double dphi_dw = wrap(std::arg(xwp) - std::arg(xwm)) / (2.0 * dw);
            const double dlogA_dt = (std::log(std::abs(xtp)) - std::log(std::abs(xtm))) / (2.0 * dt);
            const double dlogA_dw = (std::log(std::abs(xwp)) - std::log(std::abs(xwm))) / (2.0 * dw);

            const double res_a = dphi_dt - dlogA_dw / (lam * lam) - w / 2.0;
            const double res_b = dphi_dw + lam * lam * dlogA_dt + t / 2.0;
            const double scale_a = std::abs(dphi_dt) + std::abs(w) / 2.0 + 1e-12;
            const double scale_b = std::abs(dphi_dw) + std::abs(t) / 2.0 + 1e-12;

            report.omega.push_back(w);
            report.t.push_back(t);
            report.residual_a.push_back(std::abs(res_a) / scale_a);
            report.residual_b.push_back(std::abs(res_b) / scale_b);
        }
    }
    if (report.omega.empty())
        throw Error("relation_residual: empty mask, signal too weak everywhere");
    report.masked_points = report.omega.size();
    report.median_residual_a = median(report.residual_a);
    report.median_residual_b = median(report.residual_b);
    return report;
}

void write_relation_csv(const std::string& path, const RelationReport& report) {
    std::ofstream out(path);
    if (!out) throw Error("write_relation_csv: cannot open '" + path + "'");
    out << "omega,t,residual_a,residual_b\n";
    for (std::size_t i = 0; i < report.masked_points; ++i)
        out << report.omega[i] << ',' << report.t[i] << ',' << report.residual_a[i] << ','
            << report.residual_b[i] << '\n';
    out << "# median_residual_a=" << report.median_residual_a
        << " median_residual_b=" << report.median_residual_b
        << " masked_points=" << report.masked_points << '\n';
}

}  // namespace psep
