#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>

#include "psep/evaluation.hpp"

using namespace psep;
namespace fs = std::filesystem;

namespace {

AudioClip noise_clip(std::size_t channels, std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    AudioClip clip;
    clip.sample_rate = 8000;
    clip.samples.resize(channels, std::vector<double>(length));
    for (auto& ch : clip.samples)
        for (auto& s : ch) s = dist(rng);
    return clip;
}

AudioClip scaled(const AudioClip& clip, double factor) {
    AudioClip out = clip;
    for (auto& ch : out.samples)
        for (auto& s : ch) s *= factor;
    return out;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("perfect reconstruction hits the cap") {
    AudioClip ref = noise_clip(2, 500, 1);
    CHECK(sdr(ref, ref) == kSdrCap);
}

TEST_CASE("known error ratios give exact scores") {
    AudioClip ref = noise_clip(1, 400, 2);
    // estimate = 2s: error = s, ratio 1, 0 dB
    CHECK(sdr(ref, scaled(ref, 2.0)) == doctest::Approx(0.0).scale(1.0));
    // estimate = 1.1s: error = 0.1s, ratio 100, 20 dB
    CHECK(sdr(ref, scaled(ref, 1.1)) == doctest::Approx(20.0).epsilon(1e-9));
    // estimate = 0: error = s, 0 dB
    CHECK(sdr(ref, scaled(ref, 0.0)) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("shape mismatches and silent references are rejected") {
    AudioClip ref = noise_clip(1, 100, 3);
    AudioClip longer = noise_clip(1, 101, 3);
    AudioClip stereo = noise_clip(2, 100, 3);
    CHECK_THROWS_AS(sdr(ref, longer), Error);
    CHECK_THROWS_AS(sdr(ref, stereo), Error);
    AudioClip zero = scaled(ref, 0.0);
    CHECK_THROWS_AS(sdr(zero, ref), Error);
    AudioClip empty;
    empty.sample_rate = 8000;
    CHECK_THROWS_AS(sdr(empty, empty), Error);
}

TEST_CASE("segmented scoring averages per-window scores") {
    // first half: estimate = 2s (0 dB); second half: estimate = 1.1s (20 dB)
    AudioClip ref = noise_clip(1, 16000, 4);
    AudioClip est = ref;
    for (std::size_t n = 0; n < 8000; ++n) est.samples[0][n] *= 2.0;
    for (std::size_t n = 8000; n < 16000; ++n) est.samples[0][n] *= 1.1;
    SdrOptions opts;
    opts.segment_seconds = 1.0;  // two windows at 8 kHz
    CHECK(sdr(ref, est, opts) == doctest::Approx(10.0).epsilon(1e-9));

    // silent window is skipped, not fatal
    AudioClip half_silent = ref;
    for (std::size_t n = 0; n < 8000; ++n) half_silent.samples[0][n] = 0.0;
    AudioClip est2 = scaled(half_silent, 1.1);
    CHECK(sdr(half_silent, est2, opts) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("song evaluation skips silent stems and missing estimates") {
    Song song;
    song.name = "t";
    song.mixture = noise_clip(1, 200, 5);
    song.sources["bass"] = noise_clip(1, 200, 6);
    song.sources["drums"] = scaled(song.sources["bass"], 0.0);  // silent stem
    song.sources["vocals"] = noise_clip(1, 200, 7);

    std::map<std::string, AudioClip> estimates;
    estimates["bass"] = scaled(song.sources["bass"], 1.1);
    estimates["drums"] = noise_clip(1, 200, 8);
    // no vocals estimate at all

    auto scores = evaluate_song(song, estimates);
    REQUIRE(scores.size() == 1);
    CHECK(scores.at("bass") == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("aggregation uses the median per instrument") {
    std::map<std::string, std::map<std::string, double>> per_song;
    per_song["s1"]["bass"] = 1.0;
    per_song["s2"]["bass"] = 9.0;
    per_song["s3"]["bass"] = 2.0;
    per_song["s1"]["vocals"] = 4.0;
    per_song["s2"]["vocals"] = 6.0;
    ScoreReport report = aggregate(per_song);
    CHECK(report.median_per_instrument.at("bass") == 2.0);        // odd count
    CHECK(report.median_per_instrument.at("vocals") == 5.0);      // even: mean of middle two
    CHECK_THROWS_AS(aggregate({}), Error);
}

TEST_CASE("comparison reproduces reference improvement arithmetic") {
    std::map<std::string, std::map<std::string, double>> base_scores, cand_scores;
    base_scores["s"]["bass"] = 3.24;
    base_scores["s"]["vocals"] = 4.68;
    cand_scores["s"]["bass"] = 3.44;
    cand_scores["s"]["vocals"] = 4.71;
    Comparison cmp = compare(aggregate(base_scores), aggregate(cand_scores));
    CHECK(cmp.delta_db.at("bass") == doctest::Approx(0.20).epsilon(1e-9));
    CHECK(cmp.relative_improvement_pct.at("bass") == doctest::Approx(6.17).epsilon(1e-2));
    CHECK(cmp.relative_improvement_pct.at("vocals") == doctest::Approx(0.64).epsilon(1e-2));
}

TEST_CASE("comparison rejects mismatched reports") {
    std::map<std::string, std::map<std::string, double>> a, b;
    a["s"]["bass"] = 1.0;
    b["s"]["vocals"] = 1.0;
    CHECK_THROWS_AS(compare(aggregate(a), aggregate(b)), Error);
    b = a;
    b["s2"]["bass"] = 2.0;
    CHECK_THROWS_AS(compare(aggregate(a), aggregate(b)), Error);
}

TEST_CASE("score writers emit the documented schemas") {
    std::map<std::string, std::map<std::string, double>> per_song;
    per_song["s1"]["bass"] = 1.5;
    ScoreReport report = aggregate(per_song);
    report.architecture = "joint";
    report.preprocessing = "dt_df_shift";
    report.seed = 7;
    report.config_hash = "abc";

    const fs::path dir = fs::temp_directory_path();
    const fs::path csv = dir / "psep_test_scores.csv";
    const fs::path json_path = dir / "psep_test_scores.json";
    write_score_csv(csv.string(), report);
    write_score_json(json_path.string(), report);

    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "song,instrument,sdr_db");
    std::getline(in, line);
    CHECK(line == "s1,bass,1.5");

    std::ifstream jin(json_path);
    std::string blob((std::istreambuf_iterator<char>(jin)), std::istreambuf_iterator<char>());
    CHECK(blob.find("\"architecture\": \"joint\"") != std::string::npos);
    CHECK(blob.find("not comparable to BSS Eval") != std::string::npos);
    fs::remove(csv);
    fs::remove(json_path);
}

TEST_CASE("comparison csv schema is stable") {
    std::map<std::string, std::map<std::string, double>> a, b;
    a["s"]["bass"] = 2.0;
    b["s"]["bass"] = 3.0;
    Comparison cmp = compare(aggregate(a), aggregate(b));
    const fs::path path = fs::temp_directory_path() / "psep_test_comparison.csv";
    write_comparison_csv(path.string(), cmp);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "instrument,baseline_db,candidate_db,delta_db,relative_improvement_pct");
    std::getline(in, line);
    CHECK(line == "bass,2,3,1,50");
    fs::remove(path);
}

}  // TEST_SUITE
