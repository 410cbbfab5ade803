#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <doctest.h>

#include "psep/kernels.hpp"

using namespace psep;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar and active backends agree on gemm_acc") {
    const auto& s = kernels::scalar_backend();
    const auto& a = kernels::active();
    const std::size_t B = 7, K = 33, N = 13;
    auto x = random_vec(B * K, 1);
    auto w = random_vec(K * N, 2);
    std::vector<double> c1(B * N, 0.5), c2(B * N, 0.5);
    s.gemm_acc(x.data(), w.data(), c1.data(), B, K, N);
    a.gemm_acc(x.data(), w.data(), c2.data(), B, K, N);
    for (std::size_t i = 0; i < c1.size(); ++i)
        CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-13));
}

TEST_CASE("scalar and active backends agree on gemm_at_acc") {
    const auto& s = kernels::scalar_backend();
    const auto& a = kernels::active();
    const std::size_t B = 9, K = 17, N = 21;
    auto x = random_vec(B * K, 3);
    auto dy = random_vec(B * N, 4);
    // relu sparsity path: zero out some activations
    for (std::size_t i = 0; i < x.size(); i += 3) x[i] = 0.0;
    std::vector<double> g1(K * N, 0.0), g2(K * N, 0.0);
    s.gemm_at_acc(x.data(), dy.data(), g1.data(), B, K, N);
    a.gemm_at_acc(x.data(), dy.data(), g2.data(), B, K, N);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-13));
}

TEST_CASE("scalar and active backends agree on gemm_bt") {
    const auto& s = kernels::scalar_backend();
    const auto& a = kernels::active();
    const std::size_t B = 5, K = 29, N = 37;
    auto dy = random_vec(B * N, 5);
    auto w = random_vec(K * N, 6);
    std::vector<double> d1(B * K), d2(B * K);
    s.gemm_bt(dy.data(), w.data(), d1.data(), B, K, N);
    a.gemm_bt(dy.data(), w.data(), d2.data(), B, K, N);
    for (std::size_t i = 0; i < d1.size(); ++i)
        CHECK(d1[i] == doctest::Approx(d2[i]).epsilon(1e-12));
}

TEST_CASE("gemm_acc matches a naive triple loop") {
    const auto& k = kernels::active();
    const std::size_t B = 4, K = 11, N = 6;
    auto x = random_vec(B * K, 7);
    auto w = random_vec(K * N, 8);
    std::vector<double> c(B * N, 0.0), ref(B * N, 0.0);
    k.gemm_acc(x.data(), w.data(), c.data(), B, K, N);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < N; ++j)
            for (std::size_t kk = 0; kk < K; ++kk) ref[i * N + j] += x[i * K + kk] * w[kk * N + j];
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("elementwise kernels match bitwise across backends") {
    const auto& s = kernels::scalar_backend();
    const auto& a = kernels::active();
    const std::size_t n = 103;
    auto x = random_vec(n, 9);
    for (auto& v : x) v *= 10.0;  // exercise wrap over several periods
    std::vector<double> y1(n), y2(n);

    s.relu(x.data(), y1.data(), n);
    a.relu(x.data(), y2.data(), n);
    CHECK(y1 == y2);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] >= 0.0);

    s.wrap(x.data(), y1.data(), n);
    a.wrap(x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));
        CHECK(y1[i] >= -std::numbers::pi);
        CHECK(y1[i] < std::numbers::pi);
        // wrapping preserves the angle modulo 2*pi
        CHECK(std::remainder(y1[i] - x[i], 2.0 * std::numbers::pi) ==
              doctest::Approx(0.0).epsilon(1e-12));
    }

    auto dy = random_vec(n, 10);
    std::vector<double> d1(n), d2(n);
    s.relu_grad(x.data(), dy.data(), d1.data(), n);
    a.relu_grad(x.data(), dy.data(), d2.data(), n);
    CHECK(d1 == d2);
    for (std::size_t i = 0; i < n; ++i) CHECK(d1[i] == (x[i] > 0.0 ? dy[i] : 0.0));

    std::vector<double> acc1 = dy, acc2 = dy;
    s.add(x.data(), acc1.data(), n);
    a.add(x.data(), acc2.data(), n);
    CHECK(acc1 == acc2);
    for (std::size_t i = 0; i < n; ++i) CHECK(acc1[i] == dy[i] + x[i]);
}

TEST_CASE("sumsq_diff matches a naive loop") {
    const auto& s = kernels::scalar_backend();
    const auto& a = kernels::active();
    const std::size_t n = 77;
    auto x = random_vec(n, 11);
    auto y = random_vec(n, 12);
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) ref += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(s.sumsq_diff(x.data(), y.data(), n) == doctest::Approx(ref).epsilon(1e-12));
    CHECK(a.sumsq_diff(x.data(), y.data(), n) == doctest::Approx(ref).epsilon(1e-12));
    CHECK(s.sumsq_diff(x.data(), x.data(), n) == 0.0);
}

TEST_CASE("backend names are reported") {
    CHECK(std::string(kernels::scalar_backend().name) == "scalar");
    const std::string active = kernels::active().name;
    CHECK((active == "scalar" || active == "avx2"));
    if (kernels::avx2_available()) CHECK(active == "avx2");
}

}  // TEST_SUITE
