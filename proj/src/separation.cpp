#include "psep/separation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>

#include "psep/dataset.hpp"
#include "psep/phase_features.hpp"

namespace psep {
namespace {

// Hermitian 2x2 (or 1x1) complex matrix, row-major.
using CMat = std::array<cplx, 4>;

CMat cmat_zero() { return {cplx{}, cplx{}, cplx{}, cplx{}}; }

void cmat_axpy(CMat& y, double a, const CMat& x, std::size_t dim) {
    for (std::size_t i = 0; i < dim * dim; ++i) y[i] += a * x[i];
}

double cmat_trace_real(const CMat& m, std::size_t dim) {
    double t = 0.0;
    for (std::size_t i = 0; i < dim; ++i) t += m[i * dim + i].real();
    return t;
}

CMat cmat_mul(const CMat& a, const CMat& b, std::size_t dim) {
    CMat out = cmat_zero();
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            for (std::size_t l = 0; l < dim; ++l) out[i * dim + j] += a[i * dim + l] * b[l * dim + j];
    return out;
}

CMat cmat_inverse(const CMat& m, std::size_t dim, std::size_t bin) {
    CMat inv = cmat_zero();
    if (dim == 1) {
        if (std::abs(m[0]) == 0.0)
            throw Error("wiener_filter: singular mixture covariance at bin " + std::to_string(bin));
        inv[0] = 1.0 / m[0];
        return inv;
    }
    const cplx det = m[0] * m[3] - m[1] * m[2];
    if (std::abs(det) == 0.0)
        throw Error("wiener_filter: singular mixture covariance at bin " + std::to_string(bin));
    inv[0] = m[3] / det;
    inv[1] = -m[1] / det;
    inv[2] = -m[2] / det;
    inv[3] = m[0] / det;
    return inv;
}

void assert_hermitian_psd(const CMat& m, std::size_t dim, std::size_t bin) {
    const double scale = std::max(cmat_trace_real(m, dim), 1e-300);
    if (dim == 2 && std::abs(m[1] - std::conj(m[2])) > 1e-9 * scale)
        throw Error("wiener_filter: covariance not Hermitian at bin " + std::to_string(bin));
    // eigenvalues of a Hermitian 2x2: (tr +- sqrt(tr^2 - 4 det)) / 2
    double min_eig;
    if (dim == 1) {
        min_eig = m[0].real();
    } else {
        const double tr = cmat_trace_real(m, 2);
        const double det = (m[0] * m[3] - m[1] * m[2]).real();
        const double disc = std::sqrt(std::max(tr * tr - 4.0 * det, 0.0));
        min_eig = 0.5 * (tr - disc);
    }
    if (min_eig < -1e-9 * scale)
        throw Error("wiener_filter: covariance not PSD at bin " + std::to_string(bin));
}

}  // namespace

void WienerConfig::validate() const {
    if (regularization <= 0.0) throw Error("WienerConfig: regularization must be positive");
}

std::map<std::string, AmpTensor> estimate_amplitudes(nn::ModelBundle& bundle,
                                                     const AudioClip& mixture) {
    if (mixture.sample_rate != bundle.stft_config.sample_rate)
        throw Error("estimate_amplitudes: clip sample rate differs from bundle config");
    const Spectrogram spec = stft(mixture, bundle.stft_config);
    const AmpTensor mix_amp = amplitude(spec);

    const bool with_amp = bundle.tag == nn::ArchTag::amp_only ||
                          bundle.tag == nn::ArchTag::joint ||
                          bundle.tag == nn::ArchTag::naive_concat;
    const bool with_phase = bundle.tag != nn::ArchTag::amp_only;

    PhaseFeatureTensor feats;
    if (with_phase) feats = extract_phase_features(phase(spec), bundle.phase_config);
    const ExampleSet examples = make_examples(with_amp ? &mix_amp : nullptr,
                                              with_phase ? &feats : nullptr, mix_amp,
                                              bundle.context);

    const std::size_t frames = spec.values.frames;
    const std::size_t channels = spec.values.channels;
    const std::size_t bins = spec.values.bins;

    std::map<std::string, AmpTensor> out;
    for (auto& [instrument, net] : bundle.networks) {
        AmpTensor est(channels, frames, bins);
        constexpr std::size_t kBatch = 256;
        for (std::size_t lo = 0; lo < frames; lo += kBatch) {
            const std::size_t hi = std::min(lo + kBatch, frames);
            Matrix amp_in, phase_in;
            if (with_amp) {
                amp_in = Matrix(hi - lo, examples.amp_inputs.cols);
                std::copy_n(examples.amp_inputs.row(lo), amp_in.size(), amp_in.v.begin());
            }
            if (with_phase) {
                phase_in = Matrix(hi - lo, examples.phase_inputs.cols);
                std::copy_n(examples.phase_inputs.row(lo), phase_in.size(), phase_in.v.begin());
            }
            Matrix pred = nn::forward(net, with_amp ? &amp_in : nullptr,
                                      with_phase ? &phase_in : nullptr);
            for (std::size_t r = 0; r < pred.rows; ++r)
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t k = 0; k < bins; ++k)
                        est.at(c, lo + r, k) = pred.at(r, c * bins + k);
        }
        out[instrument] = std::move(est);
    }
    return out;
}

std::map<std::string, AmpTensor> irm_amplitude(const std::map<std::string, Spectrogram>& sources,
                                               const Spectrogram& mixture, int exponent) {
    if (sources.empty()) throw Error("irm_amplitude: no sources");
    if (exponent != 1 && exponent != 2) throw Error("irm_amplitude: exponent must be 1 or 2");
    const auto& shape = mixture.values;
    for (const auto& [name, s] : sources)
        if (!s.values.same_shape(shape)) throw Error("irm_amplitude: shape mismatch for " + name);

    const double nsrc = double(sources.size());
    std::map<std::string, AmpTensor> out;
    for (const auto& [name, _] : sources)
        out[name] = AmpTensor(shape.channels, shape.frames, shape.bins);

    for (std::size_t i = 0; i < shape.size(); ++i) {
        double denom = 0.0;
        for (const auto& [_, s] : sources) {
            const double a = std::abs(s.values.v[i]);
            denom += exponent == 1 ? a : a * a;
        }
        const double mix_mag = std::abs(shape.v[i]);
        for (const auto& [name, s] : sources) {
            const double a = std::abs(s.values.v[i]);
            const double num = exponent == 1 ? a : a * a;
            const double mask = denom > 0.0 ? num / denom : 1.0 / nsrc;
            out[name].v[i] = mask * mix_mag;
        }
    }
    return out;
}

AudioClip synthesize(const AmpTensor& amp, const PhaseTensor& ph, const StftConfig& cfg) {
    return istft(polar_to_complex(amp, ph, cfg));
}

AudioClip oracle_phase_synthesize(const AmpTensor& amp_est, const AudioClip& true_source,
                                  const StftConfig& cfg) {
    return synthesize(amp_est, phase(stft(true_source, cfg)), cfg);
}

std::map<std::string, Spectrogram> wiener_filter(const std::map<std::string, AmpTensor>& estimates,
                                                 const Spectrogram& mixture,
                                                 const WienerConfig& cfg) {
    cfg.validate();
    if (estimates.size() < 2) throw Error("wiener_filter: need at least two instruments");
    const auto& mix = mixture.values;
    for (const auto& [name, amp] : estimates) {
        if (amp.channels != mix.channels || amp.frames != mix.frames || amp.bins != mix.bins)
            throw Error("wiener_filter: estimate shape mismatch for " + name);
        for (double a : amp.v)
            if (a < 0.0) throw Error("wiener_filter: negative amplitude for " + name);
    }

    std::map<std::string, Spectrogram> out;
    for (const auto& [name, _] : estimates) {
        out[name].config = mixture.config;
        out[name].values = ComplexTensor(mix.channels, mix.frames, mix.bins);
    }

    if (cfg.mode == WienerMode::ratio_mask) {
        const double nsrc = double(estimates.size());
        for (std::size_t i = 0; i < mix.size(); ++i) {
            double denom = 0.0;
            for (const auto& [_, amp] : estimates) denom += amp.v[i] * amp.v[i];
            for (const auto& [name, amp] : estimates) {
                const double mask = denom > 0.0 ? amp.v[i] * amp.v[i] / denom : 1.0 / nsrc;
                out[name].values.v[i] = mask * mix.v[i];
            }
        }
        return out;
    }

    // multichannel mode
    const std::size_t channels = mix.channels;
    const std::size_t frames = mix.frames;
    const std::size_t bins = mix.bins;
    const std::size_t nsrc = estimates.size();

    // v_j(k,m): channel-averaged squared amplitude
    std::vector<std::string> names;
    for (const auto& [name, _] : estimates) names.push_back(name);
    std::vector<std::vector<double>> v(nsrc, std::vector<double>(frames * bins, 0.0));
    for (std::size_t j = 0; j < nsrc; ++j) {
        const auto& amp = estimates.at(names[j]);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t m = 0; m < frames; ++m)
                for (std::size_t k = 0; k < bins; ++k)
                    v[j][m * bins + k] += amp.at(c, m, k) * amp.at(c, m, k) / double(channels);
    }

    const std::size_t passes = 1 + cfg.em_iterations;
    for (std::size_t pass = 0; pass < passes; ++pass) {
        for (std::size_t k = 0; k < bins; ++k) {
            // weighted spatial covariance per source
            std::vector<CMat> cov(nsrc, cmat_zero());
            std::vector<double> wsum(nsrc, 0.0);
            for (std::size_t m = 0; m < frames; ++m) {
                double vtot = 0.0;
                for (std::size_t j = 0; j < nsrc; ++j) vtot += v[j][m * bins + k];
                if (vtot <= 0.0) continue;
                cplx x[2] = {mix.at(0, m, k),
                             channels > 1 ? mix.at(1, m, k) : cplx{}};
                for (std::size_t j = 0; j < nsrc; ++j) {
                    const double w = v[j][m * bins + k] / vtot;
                    if (w <= 0.0) continue;
                    for (std::size_t a = 0; a < channels; ++a)
                        for (std::size_t b = 0; b < channels; ++b)
                            cov[j][a * channels + b] += w * x[a] * std::conj(x[b]);
                    wsum[j] += w;
                }
            }
            for (std::size_t j = 0; j < nsrc; ++j) {
                if (wsum[j] > 0.0)
                    for (std::size_t i = 0; i < channels * channels; ++i) cov[j][i] /= wsum[j];
                // diagonal loading relative to trace
                const double tr = cmat_trace_real(cov[j], channels);
                for (std::size_t d = 0; d < channels; ++d)
                    cov[j][d * channels + d] += cfg.regularization * tr;
                assert_hermitian_psd(cov[j], channels, k);
            }

            for (std::size_t m = 0; m < frames; ++m) {
                double vtot = 0.0;
                CMat mix_cov = cmat_zero();
                for (std::size_t j = 0; j < nsrc; ++j) {
                    const double vj = v[j][m * bins + k];
                    vtot += vj;
                    cmat_axpy(mix_cov, vj, cov[j], channels);
                }
                const cplx x[2] = {mix.at(0, m, k),
                                   channels > 1 ? mix.at(1, m, k) : cplx{}};
                if (vtot <= 0.0) {
                    // silent bin: equal split keeps the decomposition conservative
                    for (std::size_t j = 0; j < nsrc; ++j)
                        for (std::size_t c = 0; c < channels; ++c)
                            out[names[j]].values.at(c, m, k) = x[c] / double(nsrc);
                    continue;
                }
                const double tr = cmat_trace_real(mix_cov, channels);
                for (std::size_t d = 0; d < channels; ++d)
                    mix_cov[d * channels + d] += cfg.regularization * tr;
                const CMat inv = cmat_inverse(mix_cov, channels, k);
                for (std::size_t j = 0; j < nsrc; ++j) {
                    CMat gain = cmat_mul(cov[j], inv, channels);
                    const double vj = v[j][m * bins + k];
                    for (std::size_t c = 0; c < channels; ++c) {
                        cplx y{};
                        for (std::size_t b = 0; b < channels; ++b)
                            y += vj * gain[c * channels + b] * x[b];
                        out[names[j]].values.at(c, m, k) = y;
                    }
                }
            }
        }
        if (pass + 1 < passes) {
            // EM refinement: v_j from the filtered estimates
            for (std::size_t j = 0; j < nsrc; ++j) {
                auto& vj = v[j];
                std::fill(vj.begin(), vj.end(), 0.0);
                const auto& est = out[names[j]].values;
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t m = 0; m < frames; ++m)
                        for (std::size_t k = 0; k < bins; ++k)
                            vj[m * bins + k] += std::norm(est.at(c, m, k)) / double(channels);
            }
        }
    }
    return out;
}

SeparationResult separate(nn::ModelBundle& bundle, const AudioClip& mixture,
                          const WienerConfig& wiener) {
    SeparationResult result;
    result.mixture_spec = stft(mixture, bundle.stft_config);
    result.raw_amplitudes = estimate_amplitudes(bundle, mixture);
    auto filtered = wiener_filter(result.raw_amplitudes, result.mixture_spec, wiener);
    for (auto& [instrument, spec] : filtered) {
        result.wiener_amplitudes[instrument] = amplitude(spec);
        AudioClip clip = istft(spec);
        // match the mixture length exactly
        for (auto& ch : clip.samples) ch.resize(mixture.length(), 0.0);
        result.estimates[instrument] = std::move(clip);
    }
    return result;
}

void write_estimates(const std::string& dir, const SeparationResult& result) {
    std::filesystem::create_directories(dir);
    for (const auto& [instrument, clip] : result.estimates)
        write_wav((std::filesystem::path(dir) / (instrument + "_estimate.wav")).string(), clip,
                  WavFormat::float32);
}

}  // namespace psep
