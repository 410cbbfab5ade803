#pragma once

#include <string>
#include <vector>

#include "psep/common.hpp"
#include "psep/stft.hpp"

namespace psep {

struct PhaseFeatureConfig {
    bool use_raw_phase = false;       // ablation path: wrapped raw phase, no derivative
    bool use_time_derivative = true;  // instantaneous frequency
    bool use_freq_derivative = true;  // group delay
    bool correct_time_shift = true;
    bool correct_freq_shift = true;
    std::size_t fft_size = 512;  // copied from the StftConfig that produced the phase
    std::size_t hop = 128;

    std::size_t feature_count() const;
    void validate() const;
};

// I x M x K x F, last axis [dt, df] when both derivatives are enabled.
using PhaseFeatureTensor = Tensor4;

struct Histogram {
    std::vector<double> edges;       // B + 1 edges over [-pi, pi]
    std::vector<std::size_t> counts; // B
    std::size_t bin_index = 0;       // frequency bin the data came from
    std::string feature_name;
};

// wrap to [-pi, pi); values already in range are unchanged
double wrap(double x);
RealTensor wrap(const RealTensor& x);

// frame m holds wrap(phi(k,m) - phi(k,m-1)); frame 0 is zero
PhaseTensor time_diff(const PhaseTensor& ph);
// bin k holds wrap(phi(k,m) - phi(k-1,m)); bin 0 is zero
PhaseTensor freq_diff(const PhaseTensor& ph);
// wrap(dt - 2*pi*k*hop/fft_size): cancels the STFT shift-theorem offset so
// a stationary bin-center tone yields zero
PhaseTensor correct_time_shift(const PhaseTensor& dt, std::size_t fft_size, std::size_t hop);
// wrap(df - pi): centers the group-delay distribution
PhaseTensor correct_freq_shift(const PhaseTensor& df);

PhaseFeatureTensor extract_phase_features(const PhaseTensor& ph, const PhaseFeatureConfig& cfg);

// counts over uniform bins spanning [-pi, pi]
Histogram feature_histogram(const std::vector<double>& values, std::size_t bins,
                            std::size_t bin_index, const std::string& feature_name);

void write_histogram_csv(const std::string& path, const Histogram& h);

// PSPC-style dump with the feature count recorded in the header.
void write_pspc_features(const std::string& path, const PhaseFeatureTensor& t,
                         const StftConfig& cfg);

}  // namespace psep
