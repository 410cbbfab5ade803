#include "psep/stft.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace psep {
namespace {

constexpr double kPi = std::numbers::pi;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Forward DFT of a windowed real frame, bins 0..N/2.
void real_dft_bins(const std::vector<double>& frame, std::vector<cplx>& scratch,
                   cplx* out, std::size_t n_bins) {
    const std::size_t n = frame.size();
    if (is_pow2(n)) {
        scratch.assign(n, cplx{});
        for (std::size_t i = 0; i < n; ++i) scratch[i] = frame[i];
        detail::fft(scratch, false);
        for (std::size_t k = 0; k < n_bins; ++k) out[k] = scratch[k];
    } else {
        // naive fallback for non-power-of-two sizes
        for (std::size_t k = 0; k < n_bins; ++k) {
            cplx acc{};
            for (std::size_t i = 0; i < n; ++i) {
                const double ang = -2.0 * kPi * double(k) * double(i) / double(n);
                acc += frame[i] * cplx(std::cos(ang), std::sin(ang));
            }
            out[k] = acc;
        }
    }
}

// Inverse DFT back to a real frame from the half spectrum.
void inverse_real_dft(const cplx* bins, std::size_t n, std::vector<cplx>& scratch,
                      std::vector<double>& frame) {
    const std::size_t n_bins = n / 2 + 1;
    scratch.assign(n, cplx{});
    for (std::size_t k = 0; k < n_bins; ++k) scratch[k] = bins[k];
    for (std::size_t k = n_bins; k < n; ++k) scratch[k] = std::conj(bins[n - k]);
    frame.resize(n);
    if (is_pow2(n)) {
        detail::fft(scratch, true);
        for (std::size_t i = 0; i < n; ++i) frame[i] = scratch[i].real();
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            cplx acc{};
            for (std::size_t k = 0; k < n; ++k) {
                const double ang = 2.0 * kPi * double(k) * double(i) / double(n);
                acc += scratch[k] * cplx(std::cos(ang), std::sin(ang));
            }
            frame[i] = acc.real() / double(n);
        }
    }
}

}  // namespace

namespace detail {

void fft(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    if (!is_pow2(n)) throw Error("fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * kPi / double(len);
        const cplx wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const cplx u = a[i + j];
                const cplx v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= double(n);
}

}  // namespace detail

void StftConfig::validate() const {
    if (fft_size == 0 || fft_size % 2 != 0) throw Error("StftConfig: fft_size must be even");
    if (hop == 0 || hop > fft_size) throw Error("StftConfig: need 0 < hop <= fft_size");
    if (sample_rate <= 0) throw Error("StftConfig: sample_rate must be positive");
    if (window_kind == WindowKind::gaussian && gaussian_lambda <= 0.0)
        throw Error("StftConfig: gaussian_lambda must be positive");
}

std::vector<double> make_window(const StftConfig& config) {
    config.validate();
    const std::size_t n = config.fft_size;
    std::vector<double> w(n);
    switch (config.window_kind) {
        case WindowKind::hann:
            for (std::size_t i = 0; i < n; ++i)
                w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(n));
            break;
        case WindowKind::sqrt_hann:
            for (std::size_t i = 0; i < n; ++i)
                w[i] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(n)));
            break;
        case WindowKind::gaussian: {
            const double lam = config.gaussian_lambda;
            const double norm = std::pow(lam, -0.5) * std::pow(kPi, -0.25);
            for (std::size_t i = 0; i < n; ++i) {
                const double t = (double(i) - double(n) / 2.0) / double(config.sample_rate);
                w[i] = norm * std::exp(-t * t / (2.0 * lam * lam));
            }
            break;
        }
    }
    return w;
}

void require_cola(const StftConfig& config) {
    if (config.window_kind == WindowKind::gaussian)
        throw Error("istft: gaussian windows are analysis-only (no COLA guarantee)");
    const auto w = make_window(config);
    const std::size_t n = config.fft_size;
    // sum of squared windows over one hop period, ignoring ramp-up edges
    std::vector<double> d(n, 0.0);
    for (std::size_t shift = 0; shift < n; shift += config.hop)
        for (std::size_t i = 0; i + shift < n; ++i) d[i] += w[i + shift] * w[i + shift];
    // first hop samples of a fully-covered period
    double lo = d[0], hi = d[0];
    for (std::size_t i = 0; i < config.hop && i < n; ++i) {
        lo = std::min(lo, d[i]);
        hi = std::max(hi, d[i]);
    }
    const double mean = 0.5 * (lo + hi);
    if (mean <= 0.0 || (hi - lo) > 1e-10 * mean)
        throw Error("istft: window/hop pair does not satisfy constant overlap-add");
}

Spectrogram stft_with_window(const AudioClip& clip, const StftConfig& config,
                             const std::vector<double>& window) {
    config.validate();
    if (window.size() != config.fft_size) throw Error("stft: window length mismatch");
    const std::size_t n = config.fft_size;
    const std::size_t pad = config.center_pad ? n / 2 : 0;

    const std::size_t len = clip.length() + 2 * pad;
    if (len < n) throw Error("stft: clip too short for one frame");
    // ceil framing: a partial tail hop still gets a (zero-padded) frame so
    // the inverse covers every input sample
    const std::size_t frames = (len - n + config.hop - 1) / config.hop + 1;
    const std::size_t n_bins = config.num_bins();

    Spectrogram spec;
    spec.config = config;
    spec.values = ComplexTensor(clip.channels(), frames, n_bins);

    std::vector<double> frame(n);
    std::vector<cplx> scratch;
    for (std::size_t c = 0; c < clip.channels(); ++c) {
        const auto& x = clip.samples[c];
        for (std::size_t m = 0; m < frames; ++m) {
            const std::size_t start = m * config.hop;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t idx = start + i;
                const double s = (idx < pad || idx >= pad + x.size()) ? 0.0 : x[idx - pad];
                frame[i] = s * window[i];
            }
            real_dft_bins(frame, scratch, &spec.values.at(c, m, 0), n_bins);
        }
    }
    return spec;
}

Spectrogram stft(const AudioClip& clip, const StftConfig& config) {
    return stft_with_window(clip, config, make_window(config));
}

AudioClip istft(const Spectrogram& spec) {
    const StftConfig& cfg = spec.config;
    require_cola(cfg);
    const auto window = make_window(cfg);
    const std::size_t n = cfg.fft_size;
    const std::size_t pad = cfg.center_pad ? n / 2 : 0;
    const std::size_t frames = spec.values.frames;
    const std::size_t padded_len = (frames - 1) * cfg.hop + n;
    if (padded_len < 2 * pad) throw Error("istft: spectrogram too short");
    const std::size_t out_len = padded_len - 2 * pad;

    // per-sample window-squared weight; exact reconstruction wherever > 0
    std::vector<double> weight(padded_len, 0.0);
    for (std::size_t m = 0; m < frames; ++m)
        for (std::size_t i = 0; i < n; ++i)
            weight[m * cfg.hop + i] += window[i] * window[i];

    AudioClip out;
    out.sample_rate = cfg.sample_rate;
    out.samples.assign(spec.values.channels, std::vector<double>(out_len, 0.0));

    std::vector<double> frame;
    std::vector<cplx> scratch;
    std::vector<double> acc(padded_len);
    for (std::size_t c = 0; c < spec.values.channels; ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t m = 0; m < frames; ++m) {
            inverse_real_dft(&spec.values.at(c, m, 0), n, scratch, frame);
            const std::size_t start = m * cfg.hop;
            for (std::size_t i = 0; i < n; ++i) acc[start + i] += frame[i] * window[i];
        }
        for (std::size_t i = 0; i < out_len; ++i) {
            const double d = weight[pad + i];
            out.samples[c][i] = d > 1e-12 ? acc[pad + i] / d : 0.0;
        }
    }
    return out;
}

AmpTensor amplitude(const Spectrogram& spec) {
    AmpTensor amp(spec.values.channels, spec.values.frames, spec.values.bins);
    for (std::size_t i = 0; i < spec.values.size(); ++i) amp.v[i] = std::abs(spec.values.v[i]);
    return amp;
}

PhaseTensor phase(const Spectrogram& spec) {
    PhaseTensor ph(spec.values.channels, spec.values.frames, spec.values.bins);
    for (std::size_t i = 0; i < spec.values.size(); ++i) {
        double p = std::arg(spec.values.v[i]);  // (-pi, pi]
        if (p >= kPi) p = -kPi;                 // convention: [-pi, pi)
        ph.v[i] = p;
    }
    return ph;
}

Spectrogram polar_to_complex(const AmpTensor& amp, const PhaseTensor& ph,
                             const StftConfig& config) {
    if (!amp.same_shape(ph)) throw Error("polar_to_complex: shape mismatch");
    Spectrogram spec;
    spec.config = config;
    spec.values = ComplexTensor(amp.channels, amp.frames, amp.bins);
    for (std::size_t i = 0; i < amp.size(); ++i) {
        if (amp.v[i] < 0.0) throw Error("polar_to_complex: negative amplitude");
        spec.values.v[i] = std::polar(amp.v[i], ph.v[i]);
    }
    return spec;
}

void write_pspc(const std::string& path, const Spectrogram& spec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_pspc: cannot open '" + path + "'");
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write("PSPC", 4);
    put_u32(1);
    put_u32(std::uint32_t(spec.values.channels));
    put_u32(std::uint32_t(spec.values.frames));
    put_u32(std::uint32_t(spec.values.bins));
    put_u32(std::uint32_t(spec.config.fft_size));
    put_u32(std::uint32_t(spec.config.hop));
    put_u32(std::uint32_t(spec.config.sample_rate));
    for (const cplx& z : spec.values.v) {
        const float re = float(z.real()), im = float(z.imag());
        out.write(reinterpret_cast<const char*>(&re), 4);
        out.write(reinterpret_cast<const char*>(&im), 4);
    }
}

Spectrogram read_pspc(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("read_pspc: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PSPC", 4) != 0) throw Error("read_pspc: bad magic");
    auto get_u32 = [&] {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    const std::uint32_t version = get_u32();
    if (version != 1) throw Error("read_pspc: unsupported version");
    const std::uint32_t ch = get_u32(), fr = get_u32(), bins = get_u32();
    Spectrogram spec;
    spec.config.fft_size = get_u32();
    spec.config.hop = get_u32();
    spec.config.sample_rate = int(get_u32());
    spec.values = ComplexTensor(ch, fr, bins);
    for (cplx& z : spec.values.v) {
        float re = 0, im = 0;
        in.read(reinterpret_cast<char*>(&re), 4);
        in.read(reinterpret_cast<char*>(&im), 4);
        z = cplx(re, im);
    }
    if (!in) throw Error("read_pspc: truncated file");
    return spec;
}

}  // namespace psep
