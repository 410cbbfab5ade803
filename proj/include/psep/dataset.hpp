#pragma once

#include <map>
#include <string>
#include <vector>

#include "psep/audio_io.hpp"
#include "psep/common.hpp"
#include "psep/phase_features.hpp"
#include "psep/stft.hpp"

namespace psep {

// Fixed instrument order used everywhere (DSD100 convention).
const std::vector<std::string>& instrument_names();

struct Song {
    std::string name;
    std::map<std::string, AudioClip> sources;
    AudioClip mixture;
};

enum class Split { dev, test };

struct SongRef {
    std::string name;
    Split split = Split::dev;
    std::string mixture_path;
    std::map<std::string, std::string> source_paths;

    Song load() const;
};

struct SynthSpec {
    double duration_s = 6.0;
    int sample_rate = 8000;
    std::size_t channels = 2;

    void validate() const;
};

// Deterministic per (spec, seed). Four stylized stems; mixture is the exact
// sample-wise sum after a common peak-normalizing gain.
Song generate_synthetic_song(const SynthSpec& spec, std::uint64_t seed,
                             const std::string& name = "");

// DSD100 layout: Mixtures/{Dev,Test}/<song>/mixture.wav,
// Sources/{Dev,Test}/<song>/<instrument>.wav. Songs missing a stem are
// reported on stderr and skipped.
std::vector<SongRef> scan_corpus(const std::string& root);

void write_song(const std::string& root, const Song& song, Split split);

struct DatasetStats {
    // I x K matrices flattened channel-major
    std::vector<double> mean_amp;
    std::vector<double> std_amp;  // floored at 1e-5
    std::map<std::string, std::vector<double>> instrument_avg_amp;
    std::size_t channels = 0;
    std::size_t bins = 0;

    static constexpr double kStdFloor = 1e-5;
};

DatasetStats compute_stats(const std::vector<Song>& training_songs, const StftConfig& cfg);

// One example per STFT frame of the input clip; context frames are
// replicated at the edges. Flattening is channel-major, then context frame,
// then bin, then (for phase) feature.
struct ExampleSet {
    Matrix amp_inputs;    // frames x (I*(2C+1)*K), empty when amp disabled
    Matrix phase_inputs;  // frames x (I*(2C+1)*K*F), empty when phase disabled
    Matrix targets;       // frames x (I*K)
};

ExampleSet make_examples(const AmpTensor* input_amp, const PhaseFeatureTensor* input_phase,
                         const AmpTensor& target_amp, std::size_t context);

// Convenience: inputs from `input_clip` (mixture or a stem), target = the
// named instrument's amplitude at the center frame.
ExampleSet make_examples_for_song(const Song& song, const AudioClip& input_clip,
                                  const StftConfig& stft_cfg, const PhaseFeatureConfig* phase_cfg,
                                  bool with_amp, std::size_t context,
                                  const std::string& instrument);

}  // namespace psep
