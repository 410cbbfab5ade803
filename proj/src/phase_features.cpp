#include "psep/phase_features.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "psep/kernels.hpp"

namespace psep {
namespace {
constexpr double kPi = std::numbers::pi;
}

std::size_t PhaseFeatureConfig::feature_count() const {
    validate();
    if (use_raw_phase) return 1;
    return std::size_t(use_time_derivative) + std::size_t(use_freq_derivative);
}

void PhaseFeatureConfig::validate() const {
    if (use_raw_phase) {
        if (use_time_derivative || use_freq_derivative)
            throw Error("PhaseFeatureConfig: raw phase excludes derivatives");
        return;
    }
    if (!use_time_derivative && !use_freq_derivative)
        throw Error("PhaseFeatureConfig: at least one derivative must be enabled");
}

double wrap(double x) {
    double r;
    kernels::active().wrap(&x, &r, 1);
    return r;
}

RealTensor wrap(const RealTensor& x) {
    RealTensor out(x.channels, x.frames, x.bins);
    kernels::active().wrap(x.v.data(), out.v.data(), x.size());
    return out;
}

PhaseTensor time_diff(const PhaseTensor& ph) {
    if (ph.frames < 2) throw Error("time_diff: need at least two frames");
    PhaseTensor out(ph.channels, ph.frames, ph.bins, 0.0);
    for (std::size_t c = 0; c < ph.channels; ++c)
        for (std::size_t m = 1; m < ph.frames; ++m)
            for (std::size_t k = 0; k < ph.bins; ++k)
                out.at(c, m, k) = ph.at(c, m, k) - ph.at(c, m - 1, k);
    return wrap(out);
}

PhaseTensor freq_diff(const PhaseTensor& ph) {
    if (ph.bins < 2) throw Error("freq_diff: need at least two bins");
    PhaseTensor out(ph.channels, ph.frames, ph.bins, 0.0);
    for (std::size_t c = 0; c < ph.channels; ++c)
        for (std::size_t m = 0; m < ph.frames; ++m)
            for (std::size_t k = 1; k < ph.bins; ++k)
                out.at(c, m, k) = ph.at(c, m, k) - ph.at(c, m, k - 1);
    return wrap(out);
}

PhaseTensor correct_time_shift(const PhaseTensor& dt, std::size_t fft_size, std::size_t hop) {
    PhaseTensor out(dt.channels, dt.frames, dt.bins);
    for (std::size_t c = 0; c < dt.channels; ++c)
        for (std::size_t m = 0; m < dt.frames; ++m)
            for (std::size_t k = 0; k < dt.bins; ++k)
                // A frame-start-referenced DFT advances a stationary bin-center
                // tone's phase by 2*pi*k*hop/N per frame; remove that term so
                // stationary content maps to zero.
                out.at(c, m, k) =
                    dt.at(c, m, k) - 2.0 * kPi * double(k) * double(hop) / double(fft_size);
    return wrap(out);
}

PhaseTensor correct_freq_shift(const PhaseTensor& df) {
    PhaseTensor out(df.channels, df.frames, df.bins);
    for (std::size_t i = 0; i < df.size(); ++i) out.v[i] = df.v[i] - kPi;
    return wrap(out);
}

PhaseFeatureTensor extract_phase_features(const PhaseTensor& ph, const PhaseFeatureConfig& cfg) {
    cfg.validate();
    const std::size_t f = cfg.feature_count();
    PhaseFeatureTensor out(ph.channels, ph.frames, ph.bins, f);

    auto store = [&](const RealTensor& t, std::size_t slot) {
        for (std::size_t c = 0; c < ph.channels; ++c)
            for (std::size_t m = 0; m < ph.frames; ++m)
                for (std::size_t k = 0; k < ph.bins; ++k)
                    out.at(c, m, k, slot) = t.at(c, m, k);
    };

    if (cfg.use_raw_phase) {
        store(wrap(ph), 0);
        return out;
    }
    std::size_t slot = 0;
    if (cfg.use_time_derivative) {
        PhaseTensor dt = time_diff(ph);
        if (cfg.correct_time_shift) dt = correct_time_shift(dt, cfg.fft_size, cfg.hop);
        store(dt, slot++);
    }
    if (cfg.use_freq_derivative) {
        PhaseTensor df = freq_diff(ph);
        if (cfg.correct_freq_shift) df = correct_freq_shift(df);
        store(df, slot++);
    }
    return out;
}

Histogram feature_histogram(const std::vector<double>& values, std::size_t bins,
                            std::size_t bin_index, const std::string& feature_name) {
    if (bins < 2) throw Error("feature_histogram: need at least 2 bins");
    if (values.empty()) throw Error("feature_histogram: empty slice");
    Histogram h;
    h.bin_index = bin_index;
    h.feature_name = feature_name;
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges[b] = -kPi + 2.0 * kPi * double(b) / double(bins);
    h.counts.assign(bins, 0);
    const double width = 2.0 * kPi / double(bins);
    for (double x : values) {
        auto idx = std::size_t(std::floor((x + kPi) / width));
        if (idx >= bins) idx = bins - 1;
        ++h.counts[idx];
    }
    return h;
}

void write_histogram_csv(const std::string& path, const Histogram& h) {
    std::ofstream out(path);
    if (!out) throw Error("write_histogram_csv: cannot open '" + path + "'");
    out << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
}

void write_pspc_features(const std::string& path, const PhaseFeatureTensor& t,
                         const StftConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_pspc_features: cannot open '" + path + "'");
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write("PSPF", 4);
    put_u32(1);
    put_u32(std::uint32_t(t.channels));
    put_u32(std::uint32_t(t.frames));
    put_u32(std::uint32_t(t.bins));
    put_u32(std::uint32_t(cfg.fft_size));
    put_u32(std::uint32_t(cfg.hop));
    put_u32(std::uint32_t(cfg.sample_rate));
    put_u32(std::uint32_t(t.features));
    for (double x : t.v) {
        const float f = float(x);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
}

}  // namespace psep
