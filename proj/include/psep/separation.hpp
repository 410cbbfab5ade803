#pragma once

#include <map>
#include <string>

#include "psep/audio_io.hpp"
#include "psep/nn.hpp"
#include "psep/stft.hpp"

namespace psep {

enum class WienerMode { ratio_mask, multichannel };

struct WienerConfig {
    WienerMode mode = WienerMode::ratio_mask;
    std::size_t em_iterations = 1;   // multichannel only
    double regularization = 1e-8;    // diagonal loading relative to trace

    void validate() const;
};

struct SeparationResult {
    std::map<std::string, AudioClip> estimates;
    std::map<std::string, AmpTensor> raw_amplitudes;     // network output
    std::map<std::string, AmpTensor> wiener_amplitudes;  // post-filter magnitude
    Spectrogram mixture_spec;
};

// Network inference over the whole clip, one example per frame.
std::map<std::string, AmpTensor> estimate_amplitudes(nn::ModelBundle& bundle,
                                                     const AudioClip& mixture);

// Ideal ratio mask amplitudes: mask_j = |S_j|^p / sum_i |S_i|^p applied to
// |X|; bins with zero denominator get an equal split.
std::map<std::string, AmpTensor> irm_amplitude(
    const std::map<std::string, Spectrogram>& sources, const Spectrogram& mixture,
    int exponent = 1);

AudioClip synthesize(const AmpTensor& amp, const PhaseTensor& ph, const StftConfig& cfg);

AudioClip oracle_phase_synthesize(const AmpTensor& amp_est, const AudioClip& true_source,
                                  const StftConfig& cfg);

std::map<std::string, Spectrogram> wiener_filter(
    const std::map<std::string, AmpTensor>& estimates, const Spectrogram& mixture,
    const WienerConfig& cfg);

SeparationResult separate(nn::ModelBundle& bundle, const AudioClip& mixture,
                          const WienerConfig& wiener);

void write_estimates(const std::string& dir, const SeparationResult& result);

}  // namespace psep
