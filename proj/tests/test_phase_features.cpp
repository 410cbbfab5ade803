#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <doctest.h>

#include "psep/phase_features.hpp"
#include "psep/stft.hpp"

using namespace psep;

namespace {

constexpr double kPi = std::numbers::pi;

PhaseTensor random_phase(std::size_t c, std::size_t m, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-kPi, kPi);
    PhaseTensor t(c, m, k);
    for (auto& v : t.v) v = dist(rng);
    return t;
}

}  // namespace

TEST_SUITE("phase_features") {

TEST_CASE("wrap maps onto [-pi, pi) and is idempotent") {
    CHECK(wrap(0.3) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(wrap(kPi) == doctest::Approx(-kPi));
    CHECK(wrap(-kPi) == doctest::Approx(-kPi));
    CHECK(wrap(5.0 * kPi / 2.0) == doctest::Approx(kPi / 2.0));
    CHECK(wrap(-3.0 * kPi / 2.0) == doctest::Approx(kPi / 2.0));
    CHECK(wrap(2.0 * kPi) == doctest::Approx(0.0).scale(1.0));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(-40.0, 40.0);
    for (int i = 0; i < 500; ++i) {
        const double w = wrap(dist(rng));
        CHECK(w >= -kPi);
        CHECK(w < kPi);
        CHECK(wrap(w) == w);  // already-wrapped values pass through untouched
    }
}

TEST_CASE("time_diff matches the elementwise oracle") {
    PhaseTensor ph = random_phase(2, 5, 4, 2);
    PhaseTensor dt = time_diff(ph);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(dt.at(c, 0, k) == 0.0);
            for (std::size_t m = 1; m < 5; ++m)
                CHECK(dt.at(c, m, k) ==
                      doctest::Approx(wrap(ph.at(c, m, k) - ph.at(c, m - 1, k))).epsilon(1e-14));
        }
}

TEST_CASE("freq_diff matches the elementwise oracle") {
    PhaseTensor ph = random_phase(2, 4, 6, 3);
    PhaseTensor df = freq_diff(ph);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t m = 0; m < 4; ++m) {
            CHECK(df.at(c, m, 0) == 0.0);
            for (std::size_t k = 1; k < 6; ++k)
                CHECK(df.at(c, m, k) ==
                      doctest::Approx(wrap(ph.at(c, m, k) - ph.at(c, m, k - 1))).epsilon(1e-14));
        }
}

TEST_CASE("time-shift correction zeroes a bin-center tone's derivative") {
    // Complex exponential at bin k0, assembled from the transforms of its
    // real and imaginary parts (the transform is linear). k0 = 33 makes the
    // shift-theorem offset nonzero modulo 2*pi (pi/2 at 75 % overlap).
    for (std::size_t k0 : {std::size_t(32), std::size_t(33)}) {
        const std::size_t N = 512, hop = 128;
        StftConfig cfg;
        cfg.fft_size = N;
        cfg.hop = hop;
        cfg.sample_rate = 8000;
        const std::size_t len = 8000;
        AudioClip re, im;
        re.sample_rate = im.sample_rate = 8000;
        re.samples.resize(1, std::vector<double>(len));
        im.samples.resize(1, std::vector<double>(len));
        for (std::size_t n = 0; n < len; ++n) {
            const double ang = 2.0 * kPi * double(k0) * double(n) / double(N);
            re.samples[0][n] = std::cos(ang);
            im.samples[0][n] = std::sin(ang);
        }
        Spectrogram sr = stft(re, cfg), si = stft(im, cfg);
        Spectrogram spec = sr;
        for (std::size_t i = 0; i < spec.values.size(); ++i)
            spec.values.v[i] = sr.values.v[i] + cplx(0.0, 1.0) * si.values.v[i];

        PhaseTensor dt = time_diff(phase(spec));
        PhaseTensor corrected = correct_time_shift(dt, N, hop);
        const double offset = wrap(2.0 * kPi * double(k0) * double(hop) / double(N));
        // skip edge frames where the centered padding truncates the tone
        const std::size_t margin = N / hop + 1;
        REQUIRE(spec.values.frames > 2 * margin + 1);
        for (std::size_t m = margin; m + margin < spec.values.frames; ++m) {
            CHECK(std::abs(corrected.at(0, m, k0)) < 1e-6);
            // uncorrected value sits at the shift-theorem offset
            CHECK(std::abs(wrap(dt.at(0, m, k0) - offset)) < 1e-6);
        }
    }
}

TEST_CASE("shift corrections are pure offsets") {
    PhaseTensor dt = random_phase(1, 6, 8, 4);
    PhaseTensor ct = correct_time_shift(dt, 16, 4);
    for (std::size_t m = 0; m < 6; ++m)
        for (std::size_t k = 0; k < 8; ++k)
            CHECK(ct.at(0, m, k) ==
                  doctest::Approx(wrap(dt.at(0, m, k) - 2.0 * kPi * double(k) * 4.0 / 16.0))
                      .epsilon(1e-12));
    PhaseTensor df = random_phase(1, 6, 8, 5);
    PhaseTensor cf = correct_freq_shift(df);
    for (std::size_t i = 0; i < df.size(); ++i)
        CHECK(cf.v[i] == doctest::Approx(wrap(df.v[i] - kPi)).epsilon(1e-12));
}

TEST_CASE("feature extraction stacks dt then df") {
    PhaseTensor ph = random_phase(2, 5, 7, 6);
    PhaseFeatureConfig cfg;
    cfg.fft_size = 16;
    cfg.hop = 4;
    PhaseFeatureTensor f = extract_phase_features(ph, cfg);
    REQUIRE(f.features == 2);
    PhaseTensor dt = correct_time_shift(time_diff(ph), cfg.fft_size, cfg.hop);
    PhaseTensor df = correct_freq_shift(freq_diff(ph));
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t m = 0; m < 5; ++m)
            for (std::size_t k = 0; k < 7; ++k) {
                CHECK(f.at(c, m, k, 0) == dt.at(c, m, k));
                CHECK(f.at(c, m, k, 1) == df.at(c, m, k));
            }

    cfg.correct_time_shift = false;
    cfg.correct_freq_shift = false;
    PhaseFeatureTensor g = extract_phase_features(ph, cfg);
    PhaseTensor dt0 = time_diff(ph);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t m = 0; m < 5; ++m)
            for (std::size_t k = 0; k < 7; ++k) CHECK(g.at(c, m, k, 0) == dt0.at(c, m, k));
}

TEST_CASE("raw-phase mode passes the wrapped phase through") {
    PhaseTensor ph = random_phase(1, 4, 5, 7);
    PhaseFeatureConfig cfg;
    cfg.use_raw_phase = true;
    cfg.use_time_derivative = false;
    cfg.use_freq_derivative = false;
    REQUIRE(cfg.feature_count() == 1);
    PhaseFeatureTensor f = extract_phase_features(ph, cfg);
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t k = 0; k < 5; ++k)
            CHECK(f.at(0, m, k, 0) == doctest::Approx(wrap(ph.at(0, m, k))).epsilon(1e-14));
}

TEST_CASE("config validation catches contradictory flags") {
    PhaseFeatureConfig cfg;
    cfg.use_time_derivative = false;
    cfg.use_freq_derivative = false;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.use_raw_phase = true;
    CHECK_NOTHROW(cfg.validate());
    cfg.use_time_derivative = true;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("phase features ignore input scaling") {
    StftConfig scfg;
    scfg.fft_size = 128;
    scfg.hop = 32;
    scfg.sample_rate = 8000;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    AudioClip clip;
    clip.sample_rate = 8000;
    clip.samples.resize(1, std::vector<double>(1500));
    for (auto& s : clip.samples[0]) s = dist(rng);
    AudioClip scaled = clip;
    for (auto& s : scaled.samples[0]) s *= 7.5;

    PhaseFeatureConfig cfg;
    cfg.fft_size = scfg.fft_size;
    cfg.hop = scfg.hop;
    PhaseFeatureTensor a = extract_phase_features(phase(stft(clip, scfg)), cfg);
    PhaseFeatureTensor b = extract_phase_features(phase(stft(scaled, scfg)), cfg);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(1e-9));
}

TEST_CASE("histogram counts every value and respects bin edges") {
    std::vector<double> values = {-kPi, -1.0, 0.0, 0.1, 1.0, kPi - 1e-9};
    Histogram h = feature_histogram(values, 4, 3, "dt");
    REQUIRE(h.counts.size() == 4);
    REQUIRE(h.edges.size() == 5);
    CHECK(h.edges.front() == doctest::Approx(-kPi));
    CHECK(h.edges.back() == doctest::Approx(kPi));
    std::size_t total = 0;
    for (auto c : h.counts) total += c;
    CHECK(total == values.size());
    CHECK(h.counts[0] == 1);  // -pi
    CHECK(h.counts[1] == 1);  // -1.0
    CHECK(h.counts[2] == 3);  // 0.0, 0.1, 1.0
    CHECK(h.counts[3] == 1);  // pi - eps
    CHECK(h.bin_index == 3);
    CHECK(h.feature_name == "dt");
}

TEST_CASE("histogram csv schema is stable") {
    Histogram h = feature_histogram({0.0, 0.5}, 2, 0, "df");
    const auto path = std::filesystem::temp_directory_path() / "psep_test_hist.csv";
    write_histogram_csv(path.string(), h);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "bin_lo,bin_hi,count");
    std::filesystem::remove(path);
}

}  // TEST_SUITE
