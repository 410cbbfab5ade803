#pragma once

#include <string>
#include <vector>

#include "psep/common.hpp"

namespace psep {

// Immutable after construction; channels share one length.
struct AudioClip {
    std::vector<std::vector<double>> samples;  // [channel][n]
    int sample_rate = 0;

    std::size_t channels() const { return samples.size(); }
    std::size_t length() const { return samples.empty() ? 0 : samples[0].size(); }
    void validate() const;
};

enum class WavFormat { pcm16, float32 };

// PCM16 samples are scaled to [-1, 1) by 1/32768; float32 is bit-exact.
AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip, WavFormat format);

// Sample-wise sum, no normalization. All clips must share shape and rate.
AudioClip mix(const std::vector<AudioClip>& clips);

}  // namespace psep
