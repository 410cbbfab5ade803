#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <doctest.h>

#include "psep/theory.hpp"

using namespace psep;

namespace {

constexpr double kPi = std::numbers::pi;

// Closed form of the gaussian-window transform of a pure tone e^{j w0 u}:
// X(w, t) = e^{j w t / 2} e^{j (w0 - w) t} sqrt(2 lambda) pi^{1/4}
//           e^{-(w0 - w)^2 lambda^2 / 2}
cplx tone_closed_form(double w0, double omega, double t, double lambda) {
    const double b = w0 - omega;
    const double mag = std::sqrt(2.0 * lambda) * std::pow(kPi, 0.25) *
                       std::exp(-b * b * lambda * lambda / 2.0);
    return std::polar(mag, omega * t / 2.0 + b * t);
}

}  // namespace

TEST_SUITE("theory") {

TEST_CASE("quadrature matches the closed form for a pure tone") {
    const double w0 = 2.0 * kPi * 440.0;
    TfGrid grid = TfGrid::uniform(0.1, 0.2, 3, w0 * 0.8, w0 * 1.2, 3, 0.02);
    SignalFn tone = [=](double t) { return std::polar(1.0, w0 * t); };
    for (double t : {0.11, 0.15, 0.19})
        for (double omega : {w0 * 0.9, w0, w0 * 1.1}) {
            const cplx got = gaussian_stft_point(tone, omega, t, grid);
            const cplx want = tone_closed_form(w0, omega, t, grid.lambda);
            // absolute floor covers far-off-resonance points whose true
            // magnitude sits below the quadrature noise
            CHECK(std::abs(got - want) < 1e-6 * std::abs(want) + 1e-8);
        }
}

TEST_CASE("grid evaluation matches pointwise evaluation") {
    const double w0 = 2.0 * kPi * 300.0;
    TfGrid grid = TfGrid::uniform(0.1, 0.12, 2, w0 * 0.95, w0 * 1.05, 3, 0.02);
    SignalFn tone = [=](double t) { return std::polar(1.0, w0 * t); };
    auto rows = gaussian_stft_grid(tone, grid);
    REQUIRE(rows.size() == grid.omegas.size());
    for (std::size_t wi = 0; wi < grid.omegas.size(); ++wi) {
        REQUIRE(rows[wi].size() == grid.times.size());
        for (std::size_t ti = 0; ti < grid.times.size(); ++ti)
            CHECK(std::abs(rows[wi][ti] -
                           gaussian_stft_point(tone, grid.omegas[wi], grid.times[ti], grid)) <
                  1e-12);
    }
}

TEST_CASE("derivative relations hold exactly for a pure tone") {
    const double w0 = 2.0 * kPi * 500.0;
    SignalFn tone = [=](double t) { return std::polar(1.0, w0 * t); };
    TfGrid grid = TfGrid::uniform(0.1, 0.2, 4, w0 * 0.9, w0 * 1.1, 4, 0.02);
    RelationReport report = relation_residual(tone, grid);
    CHECK(report.masked_points > 0);
    CHECK(report.median_residual_a < 1e-4);
    CHECK(report.median_residual_b < 1e-4);
}

TEST_CASE("derivative relations hold for a linear chirp within 5 percent") {
    const double f0 = 200.0, f1 = 1200.0, span = 0.5;
    const double rate = (f1 - f0) / span;
    SignalFn chirp = [=](double t) {
        return std::polar(1.0, 2.0 * kPi * (f0 * t + 0.5 * rate * t * t));
    };
    TfGrid grid =
        TfGrid::uniform(0.18, 0.32, 5, 2.0 * kPi * 400.0, 2.0 * kPi * 800.0, 5, 0.02);
    RelationReport report = relation_residual(chirp, grid);
    CHECK(report.masked_points > 0);
    CHECK(report.median_residual_a < 0.05);
    CHECK(report.median_residual_b < 0.05);

    // halving the finite-difference steps must not make the residuals worse
    TfGrid fine = grid;
    fine.fd_time_step /= 2.0;
    fine.fd_omega_step /= 2.0;
    RelationReport refined = relation_residual(chirp, fine);
    CHECK(refined.median_residual_a <= report.median_residual_a + 1e-12);
    CHECK(refined.median_residual_b <= report.median_residual_b + 1e-12);
}

TEST_CASE("low-amplitude points are masked out") {
    const double w0 = 2.0 * kPi * 500.0;
    SignalFn tone = [=](double t) { return std::polar(1.0, w0 * t); };
    // grid reaching far from the tone: off-resonance points fall under the mask
    TfGrid grid = TfGrid::uniform(0.1, 0.15, 3, w0 * 0.5, w0 * 1.5, 9, 0.02);
    RelationReport report = relation_residual(tone, grid);
    CHECK(report.masked_points < grid.times.size() * grid.omegas.size());
    CHECK(report.masked_points > 0);
}

TEST_CASE("zero signal is rejected") {
    SignalFn zero = [](double) { return cplx(0.0, 0.0); };
    TfGrid grid = TfGrid::uniform(0.0, 0.1, 3, 100.0, 200.0, 3, 0.02);
    CHECK_THROWS_AS(relation_residual(zero, grid), Error);
}

TEST_CASE("grid validation") {
    TfGrid grid = TfGrid::uniform(0.0, 0.1, 3, 100.0, 200.0, 3, 0.02);
    CHECK_NOTHROW(grid.validate());
    grid.lambda = -1.0;
    CHECK_THROWS_AS(grid.validate(), Error);
    grid = TfGrid::uniform(0.0, 0.1, 3, 100.0, 200.0, 3, 0.02);
    grid.fd_time_step = 0.0;
    CHECK_THROWS_AS(grid.validate(), Error);
}

TEST_CASE("relation csv schema is stable") {
    const double w0 = 2.0 * kPi * 500.0;
    SignalFn tone = [=](double t) { return std::polar(1.0, w0 * t); };
    TfGrid grid = TfGrid::uniform(0.1, 0.12, 2, w0 * 0.95, w0 * 1.05, 2, 0.02);
    RelationReport report = relation_residual(tone, grid);
    const auto path = std::filesystem::temp_directory_path() / "psep_test_relation.csv";
    write_relation_csv(path.string(), report);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "omega,t,residual_a,residual_b");
    std::filesystem::remove(path);
}

}  // TEST_SUITE
