#pragma once

#include <string>
#include <vector>

#include "psep/audio_io.hpp"
#include "psep/common.hpp"

namespace psep {

enum class WindowKind { hann, sqrt_hann, gaussian };

struct StftConfig {
    std::size_t fft_size = 512;   // N, even
    std::size_t hop = 128;        // n0, 0 < n0 <= N
    WindowKind window_kind = WindowKind::hann;
    double gaussian_lambda = 0.0;  // seconds, gaussian only
    int sample_rate = 8000;
    bool center_pad = true;

    void validate() const;
    std::size_t num_bins() const { return fft_size / 2 + 1; }
};

struct Spectrogram {
    ComplexTensor values;  // I x M x K
    StftConfig config;
};

using AmpTensor = RealTensor;    // >= 0 elementwise
using PhaseTensor = RealTensor;  // wrapped to [-pi, pi)

std::vector<double> make_window(const StftConfig& config);

// Throws unless sum_m window^2(n - m*hop) is constant within 1e-10 relative.
void require_cola(const StftConfig& config);

Spectrogram stft(const AudioClip& clip, const StftConfig& config);
// Test path with an explicit analysis window (e.g. all-ones).
Spectrogram stft_with_window(const AudioClip& clip, const StftConfig& config,
                             const std::vector<double>& window);
AudioClip istft(const Spectrogram& spec);

AmpTensor amplitude(const Spectrogram& spec);
PhaseTensor phase(const Spectrogram& spec);
Spectrogram polar_to_complex(const AmpTensor& amp, const PhaseTensor& ph,
                             const StftConfig& config);

// Little-endian binary dump: "PSPC", version, I, M, K, N, n0, sample_rate,
// then interleaved (re, im) float32, channel-major, frame-major, bin-minor.
void write_pspc(const std::string& path, const Spectrogram& spec);
Spectrogram read_pspc(const std::string& path);

namespace detail {
// In-place complex FFT, size must be a power of two.
void fft(std::vector<cplx>& a, bool inverse);
}

}  // namespace psep
