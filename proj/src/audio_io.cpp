#include "psep/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace psep {
namespace {

constexpr std::uint16_t kFmtPcm = 1;
constexpr std::uint16_t kFmtFloat = 3;

template <typename T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= std::uint64_t(buf[i]) << (8 * i);
    T out;
    std::memcpy(&out, &u, sizeof(T));
    return out;
}

template <typename T>
void write_le(std::ostream& out, T value) {
    std::uint64_t u = 0;
    std::memcpy(&u, &value, sizeof(T));
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (u >> (8 * i)) & 0xff;
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

}  // namespace

void AudioClip::validate() const {
    if (sample_rate <= 0) throw Error("AudioClip: sample_rate must be positive");
    if (samples.empty()) throw Error("AudioClip: no channels");
    const std::size_t len = samples[0].size();
    for (const auto& ch : samples) {
        if (ch.size() != len) throw Error("AudioClip: channel lengths differ");
        for (double s : ch)
            if (!std::isfinite(s)) throw Error("AudioClip: non-finite sample");
    }
}

AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("read_wav: cannot open '" + path + "'");

    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw Error("read_wav: not a RIFF file: " + path);
    read_le<std::uint32_t>(in);  // riff size, unused
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw Error("read_wav: not a WAVE file: " + path);

    std::uint16_t fmt_code = 0, num_channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::vector<char> data;
    bool have_data = false;

    while (in.read(tag, 4)) {
        const std::uint32_t chunk_size = read_le<std::uint32_t>(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            fmt_code = read_le<std::uint16_t>(in);
            num_channels = read_le<std::uint16_t>(in);
            rate = read_le<std::uint32_t>(in);
            read_le<std::uint32_t>(in);  // byte rate
            read_le<std::uint16_t>(in);  // block align
            bits = read_le<std::uint16_t>(in);
            if (chunk_size > 16) in.ignore(chunk_size - 16);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data.resize(chunk_size);
            in.read(data.data(), chunk_size);
            if (std::size_t(in.gcount()) != chunk_size)
                throw Error("read_wav: truncated data chunk in " + path);
            have_data = true;
        } else {
            in.ignore(chunk_size + (chunk_size & 1));
        }
    }
    if (!have_fmt || !have_data) throw Error("read_wav: missing fmt/data chunk in " + path);
    if (num_channels < 1 || num_channels > 2)
        throw Error("read_wav: unsupported channel count in " + path);

    const bool pcm16 = fmt_code == kFmtPcm && bits == 16;
    const bool f32 = fmt_code == kFmtFloat && bits == 32;
    if (!pcm16 && !f32)
        throw Error("read_wav: unsupported encoding (only PCM16 / float32) in " + path);

    const std::size_t bytes_per = pcm16 ? 2 : 4;
    const std::size_t frames = data.size() / (bytes_per * num_channels);

    AudioClip clip;
    clip.sample_rate = int(rate);
    clip.samples.assign(num_channels, std::vector<double>(frames));
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    for (std::size_t n = 0; n < frames; ++n) {
        for (std::size_t c = 0; c < num_channels; ++c) {
            if (pcm16) {
                const std::uint16_t u = p[0] | (std::uint16_t(p[1]) << 8);
                clip.samples[c][n] = double(std::int16_t(u)) / 32768.0;
                p += 2;
            } else {
                std::uint32_t u = p[0] | (std::uint32_t(p[1]) << 8) |
                                  (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
                float f;
                std::memcpy(&f, &u, 4);
                clip.samples[c][n] = double(f);
                p += 4;
            }
        }
    }
    clip.validate();
    return clip;
}

void write_wav(const std::string& path, const AudioClip& clip, WavFormat format) {
    clip.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_wav: cannot open '" + path + "' for writing");

    const std::uint16_t channels = std::uint16_t(clip.channels());
    const std::size_t frames = clip.length();
    const bool pcm = format == WavFormat::pcm16;
    const std::uint16_t bits = pcm ? 16 : 32;
    const std::uint32_t data_size = std::uint32_t(frames * channels * (bits / 8));

    out.write("RIFF", 4);
    write_le<std::uint32_t>(out, 36 + data_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le<std::uint32_t>(out, 16);
    write_le<std::uint16_t>(out, pcm ? kFmtPcm : kFmtFloat);
    write_le<std::uint16_t>(out, channels);
    write_le<std::uint32_t>(out, std::uint32_t(clip.sample_rate));
    write_le<std::uint32_t>(out, std::uint32_t(clip.sample_rate) * channels * (bits / 8));
    write_le<std::uint16_t>(out, std::uint16_t(channels * (bits / 8)));
    write_le<std::uint16_t>(out, bits);
    out.write("data", 4);
    write_le<std::uint32_t>(out, data_size);

    for (std::size_t n = 0; n < frames; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double s = clip.samples[c][n];
            if (pcm) {
                double scaled = std::round(s * 32768.0);
                scaled = std::clamp(scaled, -32768.0, 32767.0);
                write_le<std::int16_t>(out, std::int16_t(scaled));
            } else {
                write_le<float>(out, float(s));
            }
        }
    }
    if (!out) throw Error("write_wav: write failed for '" + path + "'");
}

AudioClip mix(const std::vector<AudioClip>& clips) {
    if (clips.empty()) throw Error("mix: empty clip list");
    const auto& first = clips.front();
    AudioClip out;
    out.sample_rate = first.sample_rate;
    out.samples.assign(first.channels(), std::vector<double>(first.length(), 0.0));
    for (const auto& clip : clips) {
        if (clip.channels() != first.channels() || clip.length() != first.length() ||
            clip.sample_rate != first.sample_rate)
            throw Error("mix: clip shape or sample-rate mismatch");
        for (std::size_t c = 0; c < clip.channels(); ++c)
            for (std::size_t n = 0; n < clip.length(); ++n)
                out.samples[c][n] += clip.samples[c][n];
    }
    return out;
}

}  // namespace psep
