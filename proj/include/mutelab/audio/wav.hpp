#pragma once

// 16-bit PCM mono RIFF/WAVE reading and writing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mutelab/error.hpp"

namespace mutelab {

inline constexpr int kDefaultSampleRate = 16000;

struct AudioSignal {
    std::vector<float> samples;
    int sample_rate = kDefaultSampleRate;

    std::size_t size() const { return samples.size(); }
    double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Checks the AudioSignal invariants: non-empty, every sample in [-1, 1].
inline void validate(const AudioSignal& signal) {
    expects(!signal.samples.empty(), "audio signal has no samples");
    expects(signal.sample_rate > 0, "audio signal has non-positive sample rate");
    for (float s : signal.samples) {
        expects(s >= -1.0f && s <= 1.0f, "audio sample outside [-1, 1]");
    }
}

// x̃ ⊕ x: segment samples followed by the signal, bit-exact.
inline AudioSignal prepend(std::span<const float> segment, int segment_rate, const AudioSignal& signal) {
    expects(segment_rate == signal.sample_rate,
            "prepend: segment rate " + std::to_string(segment_rate) + " differs from signal rate " +
                std::to_string(signal.sample_rate));
    AudioSignal out;
    out.sample_rate = signal.sample_rate;
    out.samples.reserve(segment.size() + signal.samples.size());
    out.samples.insert(out.samples.end(), segment.begin(), segment.end());
    out.samples.insert(out.samples.end(), signal.samples.begin(), signal.samples.end());
    return out;
}

inline AudioSignal prepend(const AudioSignal& segment, const AudioSignal& signal) {
    return prepend(segment.samples, segment.sample_rate, signal);
}

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

// Parses a 16-bit PCM mono WAV image held in memory.
inline AudioSignal parse_wav(std::span<const unsigned char> bytes, const std::string& name = "<memory>") {
    auto fail = [&](const std::string& field, const std::string& why) {
        throw ParseError(name + ": WAV field '" + field + "': " + why);
    };
    if (bytes.size() < 12) fail("RIFF", "file shorter than RIFF header");
    if (std::memcmp(bytes.data(), "RIFF", 4) != 0) fail("RIFF", "missing RIFF tag");
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) fail("WAVE", "missing WAVE tag");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t size = detail::read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) fail(std::string(reinterpret_cast<const char*>(chunk), 4), "chunk size exceeds file");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16) fail("fmt", "chunk shorter than 16 bytes");
            format = detail::read_u16(bytes.data() + body);
            channels = detail::read_u16(bytes.data() + body + 2);
            rate = detail::read_u32(bytes.data() + body + 4);
            bits = detail::read_u16(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) fail("fmt", "data chunk before fmt chunk");
            if (format != 1) fail("audio_format", "expected PCM (1), got " + std::to_string(format));
            if (channels != 1) fail("num_channels", "expected mono (1), got " + std::to_string(channels));
            if (bits != 16) fail("bits_per_sample", "expected 16, got " + std::to_string(bits));
            if (rate == 0) fail("sample_rate", "zero sample rate");
            if (size % 2 != 0) fail("data", "odd byte count for 16-bit samples");
            AudioSignal out;
            out.sample_rate = static_cast<int>(rate);
            out.samples.resize(size / 2);
            for (std::size_t i = 0; i < out.samples.size(); ++i) {
                const auto raw = static_cast<std::int16_t>(detail::read_u16(bytes.data() + body + 2 * i));
                out.samples[i] = static_cast<float>(raw) / 32768.0f;
            }
            return out;
        }
        pos = body + size + (size & 1u);
    }
    fail(have_fmt ? "data" : "fmt", "chunk not found");
    return {};
}

inline AudioSignal read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open WAV file");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_wav(bytes, path.string());
}

// Quantizes to 16-bit: round(x * 32768) clamped to the int16 range.
inline std::vector<unsigned char> encode_wav(const AudioSignal& signal) {
    const auto n = static_cast<std::uint32_t>(signal.samples.size());
    std::vector<unsigned char> out;
    out.reserve(44 + 2 * n);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    detail::put_u32(out, 36 + 2 * n);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    detail::put_u32(out, 16);
    detail::put_u16(out, 1);
    detail::put_u16(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(signal.sample_rate));
    detail::put_u32(out, static_cast<std::uint32_t>(signal.sample_rate) * 2);
    detail::put_u16(out, 2);
    detail::put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    detail::put_u32(out, 2 * n);
    for (float s : signal.samples) {
        const double q = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
        detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    return out;
}

inline void write_wav(const std::filesystem::path& path, const AudioSignal& signal) {
    const auto bytes = encode_wav(signal);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace mutelab
