#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/model.hpp"
#include "mutelab/audio/wav.hpp"
#include "mutelab/error.hpp"

namespace mutelab {

struct AdversarialSegment {
    std::vector<float> samples;
    double epsilon = 0.02;
    int sample_rate = kDefaultSampleRate;
    std::uint64_t seed = 0;
    std::vector<std::string> models;
    std::string config_hash;

    std::size_t length() const { return samples.size(); }
    AudioSignal audio() const { return {samples, sample_rate}; }
    float max_abs() const {
        float m = 0.0f;
        for (float v : samples) m = std::max(m, std::abs(v));
        return m;
    }
};

inline AudioSignal prepend(const AdversarialSegment& segment, const AudioSignal& signal) {
    return prepend(segment.samples, segment.sample_rate, signal);
}

// Elementwise clamp to [-eps, eps]. Idempotent.
inline void project_linf(std::span<float> segment, double epsilon) {
    expects(epsilon > 0.0, "project_linf: epsilon must be positive");
    const auto e = static_cast<float>(epsilon);
    for (auto& v : segment) v = std::clamp(v, -e, e);
}

inline std::vector<float> project_linf(std::vector<float> segment, double epsilon) {
    project_linf(std::span<float>(segment), epsilon);
    return segment;
}

// Snaps to the 16-bit PCM grid without leaving the feasible set, so the WAV
// artifact reloads bit-identically.
inline void quantize_to_pcm16(std::span<float> segment, double epsilon) {
    const double top = std::floor(epsilon * 32768.0);
    for (auto& v : segment) {
        const double q = std::clamp(std::round(static_cast<double>(v) * 32768.0), -top, top);
        v = static_cast<float>(q / 32768.0);
    }
}

// FNV-1a, 64 bit, as 16 hex digits.
inline std::string stable_hash(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Identity of a checkpoint: config name plus a hash of its parameter bytes.
inline std::string model_id(const AsrModel& model) {
    std::string bytes;
    for (const auto& [name, t] : model.named_parameters()) {
        bytes.append(name);
        bytes.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(float));
    }
    return model.config().name + "-" + stable_hash(bytes).substr(0, 10);
}

enum class InitMode { random, warm_start };

inline AdversarialSegment random_segment(std::size_t length, double epsilon, std::uint64_t seed,
                                         int sample_rate = kDefaultSampleRate) {
    expects(length > 0, "segment length must be positive");
    expects(epsilon > 0.0, "segment epsilon must be positive");
    AdversarialSegment s;
    s.epsilon = epsilon;
    s.seed = seed;
    s.sample_rate = sample_rate;
    s.samples.resize(length);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-epsilon, epsilon);
    for (auto& v : s.samples) v = static_cast<float>(u(rng));
    project_linf(std::span<float>(s.samples), epsilon);
    return s;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& wav) {
    auto p = wav;
    p.replace_extension(".json");
    return p;
}

// Writes <path> (PCM16 WAV) and its JSON sidecar next to it.
inline void save_segment(const AdversarialSegment& segment, const std::filesystem::path& wav_path,
                         const nlohmann::json& extra = nlohmann::json::object()) {
    expects(segment.max_abs() <= static_cast<float>(segment.epsilon), "save_segment: segment violates its bound");
    if (wav_path.has_parent_path()) std::filesystem::create_directories(wav_path.parent_path());
    write_wav(wav_path, segment.audio());
    nlohmann::json j = extra;
    j["format"] = 1;
    j["epsilon"] = segment.epsilon;
    j["length"] = segment.length();
    j["sample_rate"] = segment.sample_rate;
    j["seed"] = segment.seed;
    j["models"] = segment.models;
    j["config_hash"] = segment.config_hash;
    std::ofstream out(sidecar_path(wav_path), std::ios::trunc);
    if (!out) throw std::runtime_error(sidecar_path(wav_path).string() + ": cannot open for writing");
    out << j.dump(2) << '\n';
}

inline AdversarialSegment load_segment(const std::filesystem::path& wav_path) {
    const auto meta_path = sidecar_path(wav_path);
    std::ifstream in(meta_path);
    if (!in) throw ParseError(meta_path.string() + ": missing segment sidecar");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }
    AdversarialSegment s;
    try {
        s.epsilon = j.at("epsilon").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.models = j.at("models").get<std::vector<std::string>>();
        s.config_hash = j.at("config_hash").get<std::string>();
        const auto length = j.at("length").get<std::size_t>();
        const auto audio = read_wav(wav_path);
        if (audio.size() != length) {
            throw SchemaError(wav_path.string() + ": sidecar says " + std::to_string(length) + " samples, WAV has " +
                              std::to_string(audio.size()));
        }
        s.samples = audio.samples;
        s.sample_rate = audio.sample_rate;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(meta_path.string() + ": " + e.what());
    }
    if (s.max_abs() > static_cast<float>(s.epsilon)) {
        throw SchemaError(wav_path.string() + ": samples exceed the recorded epsilon");
    }
    return s;
}

// Random init or warm start from a saved segment of the same length whose
// bound does not exceed the target bound.
inline AdversarialSegment init_segment(InitMode mode, std::uint64_t seed, const std::filesystem::path& warm_start,
                                       double epsilon, std::size_t length) {
    expects(epsilon > 0.0, "init_segment: epsilon must be positive");
    expects(length > 0, "init_segment: segment length must be positive");
    if (mode == InitMode::random) return random_segment(length, epsilon, seed);
    auto s = load_segment(warm_start);
    if (s.length() != length) {
        throw SchemaError("warm start " + warm_start.string() + " has " + std::to_string(s.length()) +
                          " samples, expected " + std::to_string(length));
    }
    if (s.epsilon > epsilon) {
        throw SchemaError("warm start " + warm_start.string() + " has epsilon " + std::to_string(s.epsilon) +
                          " above the target " + std::to_string(epsilon));
    }
    s.epsilon = epsilon;
    s.seed = seed;
    return s;
}

}  // namespace mutelab
