#include "psep/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <random>

namespace psep {
namespace fs = std::filesystem;
namespace {

constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    // explicit mapping so streams are stable across standard libraries
    const double u = double(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

std::vector<double> bass_stem(std::mt19937_64& rng, std::size_t len, int rate) {
    std::vector<double> x(len, 0.0);
    const std::size_t seg = std::size_t(0.5 * rate);
    double phase = 0.0;
    for (std::size_t start = 0; start < len; start += seg) {
        const double freq = uniform(rng, 40.0, 200.0);
        for (std::size_t n = start; n < std::min(start + seg, len); ++n) {
            phase += 2.0 * kPi * freq / rate;
            const double t = double(n) / rate;
            const double env = 0.5 + 0.4 * std::sin(2.0 * kPi * 0.3 * t);
            x[n] = env * std::sin(phase);
        }
    }
    return x;
}

std::vector<double> drums_stem(std::mt19937_64& rng, std::size_t len, int rate) {
    std::vector<double> x(len, 0.0);
    const std::size_t grid = std::size_t(0.25 * rate);
    const std::size_t burst = std::size_t(0.04 * rate);
    for (std::size_t start = 0; start < len; start += grid) {
        const double amp = uniform(rng, 0.4, 1.0);
        double prev = 0.0;
        for (std::size_t i = 0; i < burst && start + i < len; ++i) {
            const double white = uniform(rng, -1.0, 1.0);
            const double hp = white - prev;  // first difference brightens the noise
            prev = white;
            x[start + i] = amp * hp * std::exp(-double(i) / (0.008 * rate));
        }
    }
    return x;
}

std::vector<double> vocals_stem(std::mt19937_64& rng, std::size_t len, int rate) {
    std::vector<double> x(len, 0.0);
    const std::size_t seg = std::size_t(0.4 * rate);
    std::vector<double> phases(5, 0.0);
    for (std::size_t start = 0; start < len; start += seg) {
        const double f0 = uniform(rng, 200.0, 1000.0);
        for (std::size_t n = start; n < std::min(start + seg, len); ++n) {
            const double t = double(n) / rate;
            const double vib = 1.0 + 0.02 * std::sin(2.0 * kPi * 5.0 * t);
            double s = 0.0;
            for (std::size_t h = 0; h < phases.size(); ++h) {
                const double fh = f0 * vib * double(h + 1);
                if (fh >= 0.45 * rate) break;
                phases[h] += 2.0 * kPi * fh / rate;
                s += std::sin(phases[h]) / double(h + 1);
            }
            const double env = 0.6 + 0.3 * std::sin(2.0 * kPi * 0.7 * t);
            x[n] = 0.4 * env * s;
        }
    }
    return x;
}

std::vector<double> other_stem(std::mt19937_64& rng, std::size_t len, int rate) {
    std::vector<double> x(len, 0.0);
    double freqs[3];
    for (double& f : freqs) f = uniform(rng, 150.0, 800.0);
    double ph[3] = {uniform(rng, 0, 2 * kPi), uniform(rng, 0, 2 * kPi), uniform(rng, 0, 2 * kPi)};
    for (std::size_t n = 0; n < len; ++n) {
        const double t = double(n) / rate;
        const double env = 0.5 + 0.2 * std::sin(2.0 * kPi * 0.15 * t);
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += std::sin(2.0 * kPi * freqs[i] * t + ph[i]);
        x[n] = 0.3 * env * s / 3.0;
    }
    return x;
}

}  // namespace

const std::vector<std::string>& instrument_names() {
    static const std::vector<std::string> names = {"bass", "drums", "vocals", "other"};
    return names;
}

void SynthSpec::validate() const {
    if (duration_s <= 0.0) throw Error("SynthSpec: duration must be positive");
    if (sample_rate <= 0) throw Error("SynthSpec: sample_rate must be positive");
    if (channels < 1 || channels > 2) throw Error("SynthSpec: 1 or 2 channels");
}

Song generate_synthetic_song(const SynthSpec& spec, std::uint64_t seed, const std::string& name) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const auto len = std::size_t(spec.duration_s * spec.sample_rate);

    std::map<std::string, std::vector<double>> mono;
    mono["bass"] = bass_stem(rng, len, spec.sample_rate);
    mono["drums"] = drums_stem(rng, len, spec.sample_rate);
    mono["vocals"] = vocals_stem(rng, len, spec.sample_rate);
    mono["other"] = other_stem(rng, len, spec.sample_rate);

    Song song;
    song.name = name.empty() ? "synth_" + std::to_string(seed) : name;

    std::vector<double> sum(len, 0.0);
    for (const auto& instrument : instrument_names()) {
        const double pan = spec.channels == 2 ? uniform(rng, 0.2, kPi / 2.0 - 0.2) : kPi / 4.0;
        AudioClip clip;
        clip.sample_rate = spec.sample_rate;
        clip.samples.resize(spec.channels);
        const double gains[2] = {std::cos(pan), std::sin(pan)};
        for (std::size_t c = 0; c < spec.channels; ++c) {
            clip.samples[c].resize(len);
            for (std::size_t n = 0; n < len; ++n) clip.samples[c][n] = gains[c] * mono[instrument][n];
        }
        song.sources[instrument] = std::move(clip);
    }

    // common gain: peak-normalize the mixture to 0.7, then re-sum so that
    // mixture == sum(sources) holds bitwise
    double peak = 0.0;
    {
        std::vector<AudioClip> clips;
        for (const auto& instrument : instrument_names()) clips.push_back(song.sources[instrument]);
        AudioClip raw_mix = mix(clips);
        for (const auto& ch : raw_mix.samples)
            for (double s : ch) peak = std::max(peak, std::abs(s));
    }
    const double gain = peak > 0.0 ? 0.7 / peak : 1.0;
    for (auto& [_, clip] : song.sources)
        for (auto& ch : clip.samples)
            for (double& s : ch) s *= gain;

    std::vector<AudioClip> scaled;
    for (const auto& instrument : instrument_names()) scaled.push_back(song.sources[instrument]);
    song.mixture = mix(scaled);
    return song;
}

Song SongRef::load() const {
    Song song;
    song.name = name;
    song.mixture = read_wav(mixture_path);
    for (const auto& [instrument, path] : source_paths) song.sources[instrument] = read_wav(path);
    for (const auto& [instrument, clip] : song.sources) {
        if (clip.channels() != song.mixture.channels() || clip.length() != song.mixture.length() ||
            clip.sample_rate != song.mixture.sample_rate)
            throw Error("SongRef::load: stem/mixture shape mismatch in " + name);
    }
    // Eq-style consistency: warn (not fail) when the mixture drifts from the stem sum
    std::vector<AudioClip> clips;
    for (const auto& [_, clip] : song.sources) clips.push_back(clip);
    if (!clips.empty()) {
        const AudioClip sum = mix(clips);
        double max_err = 0.0;
        for (std::size_t c = 0; c < sum.channels(); ++c)
            for (std::size_t n = 0; n < sum.length(); ++n)
                max_err = std::max(max_err,
                                   std::abs(sum.samples[c][n] - song.mixture.samples[c][n]));
        if (max_err > 1e-6)
            std::cerr << "warning: " << name << ": mixture differs from stem sum by " << max_err
                      << "\n";
    }
    return song;
}

std::vector<SongRef> scan_corpus(const std::string& root) {
    if (!fs::is_directory(root)) throw Error("scan_corpus: no such directory: " + root);
    std::vector<SongRef> refs;
    for (const auto& [split_name, split] :
         {std::pair<std::string, Split>{"Dev", Split::dev}, {"Test", Split::test}}) {
        const fs::path mixdir = fs::path(root) / "Mixtures" / split_name;
        if (!fs::is_directory(mixdir)) continue;
        std::vector<fs::path> songs;
        for (const auto& entry : fs::directory_iterator(mixdir))
            if (entry.is_directory()) songs.push_back(entry.path());
        std::sort(songs.begin(), songs.end());
        for (const auto& songdir : songs) {
            SongRef ref;
            ref.name = songdir.filename().string();
            ref.split = split;
            ref.mixture_path = (songdir / "mixture.wav").string();
            bool complete = fs::is_regular_file(ref.mixture_path);
            for (const auto& instrument : instrument_names()) {
                const fs::path p =
                    fs::path(root) / "Sources" / split_name / ref.name / (instrument + ".wav");
                if (!fs::is_regular_file(p)) {
                    std::cerr << "warning: skipping " << ref.name << ": missing " << instrument
                              << ".wav\n";
                    complete = false;
                    break;
                }
                ref.source_paths[instrument] = p.string();
            }
            if (complete) refs.push_back(std::move(ref));
        }
    }
    if (refs.empty()) throw Error("scan_corpus: no complete songs under " + root);
    return refs;
}

void write_song(const std::string& root, const Song& song, Split split) {
    const std::string split_name = split == Split::dev ? "Dev" : "Test";
    const fs::path mixdir = fs::path(root) / "Mixtures" / split_name / song.name;
    const fs::path srcdir = fs::path(root) / "Sources" / split_name / song.name;
    fs::create_directories(mixdir);
    fs::create_directories(srcdir);
    write_wav((mixdir / "mixture.wav").string(), song.mixture, WavFormat::float32);
    for (const auto& [instrument, clip] : song.sources)
        write_wav((srcdir / (instrument + ".wav")).string(), clip, WavFormat::float32);
}

DatasetStats compute_stats(const std::vector<Song>& training_songs, const StftConfig& cfg) {
    if (training_songs.empty()) throw Error("compute_stats: empty song list");
    DatasetStats stats;
    std::vector<double> m2;  // Welford accumulator
    std::size_t count = 0;

    for (const auto& song : training_songs) {
        const AmpTensor amp = amplitude(stft(song.mixture, cfg));
        if (stats.mean_amp.empty()) {
            stats.channels = amp.channels;
            stats.bins = amp.bins;
            stats.mean_amp.assign(amp.channels * amp.bins, 0.0);
            m2.assign(amp.channels * amp.bins, 0.0);
            for (const auto& instrument : instrument_names())
                stats.instrument_avg_amp[instrument].assign(amp.channels * amp.bins, 0.0);
        }
        if (amp.channels != stats.channels || amp.bins != stats.bins)
            throw Error("compute_stats: song shape mismatch");
        for (std::size_t m = 0; m < amp.frames; ++m) {
            ++count;
            for (std::size_t c = 0; c < amp.channels; ++c)
                for (std::size_t k = 0; k < amp.bins; ++k) {
                    const std::size_t idx = c * amp.bins + k;
                    const double x = amp.at(c, m, k);
                    const double delta = x - stats.mean_amp[idx];
                    stats.mean_amp[idx] += delta / double(count);
                    m2[idx] += delta * (x - stats.mean_amp[idx]);
                }
        }
        for (const auto& instrument : instrument_names()) {
            const AmpTensor src = amplitude(stft(song.sources.at(instrument), cfg));
            auto& avg = stats.instrument_avg_amp[instrument];
            // plain sum; divided by the pooled frame count afterwards
            for (std::size_t c = 0; c < src.channels; ++c)
                for (std::size_t m = 0; m < src.frames; ++m)
                    for (std::size_t k = 0; k < src.bins; ++k)
                        avg[c * src.bins + k] += src.at(c, m, k);
        }
    }

    stats.std_amp.resize(stats.mean_amp.size());
    for (std::size_t i = 0; i < m2.size(); ++i)
        stats.std_amp[i] = std::max(std::sqrt(m2[i] / double(count)), DatasetStats::kStdFloor);
    for (auto& [_, avg] : stats.instrument_avg_amp)
        for (double& x : avg) x /= double(count);
    return stats;
}

ExampleSet make_examples(const AmpTensor* input_amp, const PhaseFeatureTensor* input_phase,
                         const AmpTensor& target_amp, std::size_t context) {
    if (!input_amp && !input_phase) throw Error("make_examples: no inputs enabled");
    const std::size_t frames = target_amp.frames;
    const std::size_t channels = target_amp.channels;
    const std::size_t bins = target_amp.bins;
    const std::size_t window = 2 * context + 1;
    if (frames < window) throw Error("make_examples: song shorter than the context window");

    ExampleSet set;
    set.targets = Matrix(frames, channels * bins);
    for (std::size_t m = 0; m < frames; ++m)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t k = 0; k < bins; ++k)
                set.targets.at(m, c * bins + k) = target_amp.at(c, m, k);

    auto clamp_frame = [&](std::ptrdiff_t m) {
        return std::size_t(std::clamp<std::ptrdiff_t>(m, 0, std::ptrdiff_t(frames) - 1));
    };

    if (input_amp) {
        if (input_amp->frames != frames) throw Error("make_examples: amp frame mismatch");
        set.amp_inputs = Matrix(frames, channels * window * bins);
        for (std::size_t m = 0; m < frames; ++m) {
            double* row = set.amp_inputs.row(m);
            std::size_t pos = 0;
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t w = 0; w < window; ++w) {
                    const std::size_t mf =
                        clamp_frame(std::ptrdiff_t(m) + std::ptrdiff_t(w) - std::ptrdiff_t(context));
                    for (std::size_t k = 0; k < bins; ++k) row[pos++] = input_amp->at(c, mf, k);
                }
        }
    }
    if (input_phase) {
        if (input_phase->frames != frames) throw Error("make_examples: phase frame mismatch");
        const std::size_t f = input_phase->features;
        set.phase_inputs = Matrix(frames, channels * window * bins * f);
        for (std::size_t m = 0; m < frames; ++m) {
            double* row = set.phase_inputs.row(m);
            std::size_t pos = 0;
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t w = 0; w < window; ++w) {
                    const std::size_t mf =
                        clamp_frame(std::ptrdiff_t(m) + std::ptrdiff_t(w) - std::ptrdiff_t(context));
                    for (std::size_t k = 0; k < bins; ++k)
                        for (std::size_t fi = 0; fi < f; ++fi)
                            row[pos++] = input_phase->at(c, mf, k, fi);
                }
        }
    }
    return set;
}

ExampleSet make_examples_for_song(const Song& song, const AudioClip& input_clip,
                                  const StftConfig& stft_cfg, const PhaseFeatureConfig* phase_cfg,
                                  bool with_amp, std::size_t context,
                                  const std::string& instrument) {
    const Spectrogram in_spec = stft(input_clip, stft_cfg);
    const AmpTensor target = amplitude(stft(song.sources.at(instrument), stft_cfg));

    AmpTensor amp;
    PhaseFeatureTensor feats;
    if (with_amp) amp = amplitude(in_spec);
    if (phase_cfg) feats = extract_phase_features(phase(in_spec), *phase_cfg);
    return make_examples(with_amp ? &amp : nullptr, phase_cfg ? &feats : nullptr, target, context);
}

}  // namespace psep
