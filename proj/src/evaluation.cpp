#include "psep/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include <json.hpp>

namespace psep {
namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) throw Error("median: empty");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double segment_sdr(const AudioClip& reference, const AudioClip& estimate, std::size_t lo,
                   std::size_t hi) {
    double sig = 0.0, err = 0.0;
    for (std::size_t c = 0; c < reference.channels(); ++c)
        for (std::size_t n = lo; n < hi; ++n) {
            const double s = reference.samples[c][n];
            const double d = s - estimate.samples[c][n];
            sig += s * s;
            err += d * d;
        }
    if (sig == 0.0) throw Error("sdr: all-zero reference");
    if (err == 0.0) return kSdrCap;
    return std::min(10.0 * std::log10(sig / err), kSdrCap);
}

}  // namespace

double sdr(const AudioClip& reference, const AudioClip& estimate, const SdrOptions& opts) {
    if (reference.channels() != estimate.channels() || reference.length() != estimate.length())
        throw Error("sdr: shape mismatch");
    const std::size_t len = reference.length();
    if (len == 0) throw Error("sdr: empty clips");

    if (opts.segment_seconds <= 0.0) return segment_sdr(reference, estimate, 0, len);

    const auto seg = std::size_t(opts.segment_seconds * reference.sample_rate);
    if (seg == 0) throw Error("sdr: segment too short");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t lo = 0; lo + seg <= len; lo += seg) {
        try {
            sum += segment_sdr(reference, estimate, lo, lo + seg);
            ++count;
        } catch (const Error&) {
            // silent segment, skipped
        }
    }
    if (count == 0) throw Error("sdr: all-zero reference");
    return sum / double(count);
}

std::map<std::string, double> evaluate_song(const Song& song,
                                            const std::map<std::string, AudioClip>& estimates,
                                            const SdrOptions& opts) {
    std::map<std::string, double> scores;
    for (const auto& [instrument, reference] : song.sources) {
        auto it = estimates.find(instrument);
        if (it == estimates.end()) continue;
        AudioClip ref = reference;
        AudioClip est = it->second;
        const std::size_t common = std::min(ref.length(), est.length());
        if (common < ref.length() || common < est.length())
            std::cerr << "note: " << song.name << "/" << instrument << ": trimmed "
                      << (std::max(ref.length(), est.length()) - common) << " samples\n";
        for (auto& ch : ref.samples) ch.resize(common);
        for (auto& ch : est.samples) ch.resize(common);
        try {
            scores[instrument] = sdr(ref, est, opts);
        } catch (const Error&) {
            std::cerr << "note: " << song.name << "/" << instrument
                      << ": silent reference, skipped\n";
        }
    }
    return scores;
}

ScoreReport aggregate(const std::map<std::string, std::map<std::string, double>>& per_song) {
    if (per_song.empty()) throw Error("aggregate: no songs");
    ScoreReport report;
    report.per_song = per_song;
    std::map<std::string, std::vector<double>> by_instrument;
    for (const auto& [_, scores] : per_song)
        for (const auto& [instrument, value] : scores) by_instrument[instrument].push_back(value);
    for (const auto& [instrument, values] : by_instrument)
        report.median_per_instrument[instrument] = median_of(values);
    return report;
}

Comparison compare(const ScoreReport& baseline, const ScoreReport& candidate) {
    for (const auto& [instrument, _] : baseline.median_per_instrument)
        if (!candidate.median_per_instrument.count(instrument))
            throw Error("compare: instrument set mismatch");
    if (baseline.median_per_instrument.size() != candidate.median_per_instrument.size())
        throw Error("compare: instrument set mismatch");
    if (baseline.per_song.size() != candidate.per_song.size())
        throw Error("compare: song set mismatch");
    for (const auto& [song, _] : baseline.per_song)
        if (!candidate.per_song.count(song)) throw Error("compare: song set mismatch");

    Comparison cmp;
    cmp.baseline = baseline;
    cmp.candidate = candidate;
    for (const auto& [instrument, base] : baseline.median_per_instrument) {
        const double cand = candidate.median_per_instrument.at(instrument);
        cmp.delta_db[instrument] = cand - base;
        cmp.relative_improvement_pct[instrument] =
            base != 0.0 ? 100.0 * (cand - base) / std::abs(base)
                        : std::numeric_limits<double>::infinity();
    }
    return cmp;
}

void write_score_csv(const std::string& path, const ScoreReport& report) {
    std::ofstream out(path);
    if (!out) throw Error("write_score_csv: cannot open '" + path + "'");
    out << "song,instrument,sdr_db\n";
    for (const auto& [song, scores] : report.per_song)
        for (const auto& [instrument, value] : scores)
            out << song << ',' << instrument << ',' << value << '\n';
}

void write_score_json(const std::string& path, const ScoreReport& report) {
    nlohmann::json j;
    j["architecture"] = report.architecture;
    j["preprocessing"] = report.preprocessing;
    j["seed"] = report.seed;
    j["config_hash"] = report.config_hash;
    j["note"] = report.note;
    for (const auto& [instrument, value] : report.median_per_instrument)
        j["median_per_instrument"][instrument] = value;
    for (const auto& [song, scores] : report.per_song)
        for (const auto& [instrument, value] : scores) j["per_song"][song][instrument] = value;
    std::ofstream out(path);
    if (!out) throw Error("write_score_json: cannot open '" + path + "'");
    out << j.dump(2) << '\n';
}

void write_comparison_csv(const std::string& path, const Comparison& comparison) {
    std::ofstream out(path);
    if (!out) throw Error("write_comparison_csv: cannot open '" + path + "'");
    out << "instrument,baseline_db,candidate_db,delta_db,relative_improvement_pct\n";
    for (const auto& [instrument, base] : comparison.baseline.median_per_instrument)
        out << instrument << ',' << base << ','
            << comparison.candidate.median_per_instrument.at(instrument) << ','
            << comparison.delta_db.at(instrument) << ','
            << comparison.relative_improvement_pct.at(instrument) << '\n';
}

}  // namespace psep
