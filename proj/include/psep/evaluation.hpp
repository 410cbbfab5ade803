#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "psep/audio_io.hpp"
#include "psep/dataset.hpp"
#include "psep/separation.hpp"

namespace psep {

constexpr double kSdrCap = 300.0;  // dB; keeps reports finite and sortable

struct SdrOptions {
    // whole clip by default; > 0 switches to non-overlapping windows of
    // this many seconds, averaged per song
    double segment_seconds = 0.0;
};

// 10*log10(|s|^2 / |s - s_hat|^2), averaged across channels, capped.
double sdr(const AudioClip& reference, const AudioClip& estimate,
           const SdrOptions& opts = {});

// Instruments with a silent reference are skipped (absent from the map).
std::map<std::string, double> evaluate_song(const Song& song,
                                            const std::map<std::string, AudioClip>& estimates,
                                            const SdrOptions& opts = {});

struct ScoreReport {
    // song -> instrument -> SDR (dB)
    std::map<std::string, std::map<std::string, double>> per_song;
    std::map<std::string, double> median_per_instrument;
    // run metadata
    std::string architecture;
    std::string preprocessing;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string note =
        "plain energy-ratio SDR; absolute values not comparable to BSS Eval";
};

// per instrument: median over songs (mean of the two middle values for an
// even count)
ScoreReport aggregate(const std::map<std::string, std::map<std::string, double>>& per_song);

struct Comparison {
    ScoreReport baseline;
    ScoreReport candidate;
    std::map<std::string, double> delta_db;
    std::map<std::string, double> relative_improvement_pct;
};

Comparison compare(const ScoreReport& baseline, const ScoreReport& candidate);

void write_score_csv(const std::string& path, const ScoreReport& report);
void write_score_json(const std::string& path, const ScoreReport& report);
void write_comparison_csv(const std::string& path, const Comparison& comparison);

}  // namespace psep
