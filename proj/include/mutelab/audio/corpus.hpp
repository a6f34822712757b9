#pragma once

// Synthetic spoken-token corpus. Each vocabulary word is rendered as a fixed
// tone pattern (a rising chirp plus a steady upper tone, 0.2 s long); an
// utterance is a run of such words between silences, with additive white
// noise at a per-domain SNR and a per-domain gain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/vocab.hpp"
#include "mutelab/audio/wav.hpp"
#include "mutelab/error.hpp"

namespace mutelab {

struct DomainSpec {
    std::string name;
    double snr_db = 30.0;
    double gain = 1.0;
};

struct CorpusConfig {
    int vocab_size = 32;
    int min_words = 3;
    int max_words = 8;
    double word_seconds = 0.2;
    double lead_silence_min = 0.05;
    double lead_silence_max = 0.4;
    double tail_silence = 0.05;
    double tone_amplitude = 0.22;
    double freq_jitter = 0.015;
    int sample_rate = kDefaultSampleRate;
    int train_per_domain = 600;
    int dev_per_domain = 160;
    int test_per_domain = 160;
    std::vector<DomainSpec> domains = {{"clean", 30.0, 1.0}, {"noisy", 12.0, 0.6}};
};

inline void to_json(nlohmann::json& j, const DomainSpec& d) {
    j = {{"name", d.name}, {"snr_db", d.snr_db}, {"gain", d.gain}};
}
inline void from_json(const nlohmann::json& j, DomainSpec& d) {
    j.at("name").get_to(d.name);
    j.at("snr_db").get_to(d.snr_db);
    j.at("gain").get_to(d.gain);
}

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
    j = {{"vocab_size", c.vocab_size},
         {"min_words", c.min_words},
         {"max_words", c.max_words},
         {"word_seconds", c.word_seconds},
         {"lead_silence_min", c.lead_silence_min},
         {"lead_silence_max", c.lead_silence_max},
         {"tail_silence", c.tail_silence},
         {"tone_amplitude", c.tone_amplitude},
         {"freq_jitter", c.freq_jitter},
         {"sample_rate", c.sample_rate},
         {"train_per_domain", c.train_per_domain},
         {"dev_per_domain", c.dev_per_domain},
         {"test_per_domain", c.test_per_domain},
         {"domains", c.domains}};
}
inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
    CorpusConfig d;
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.min_words = j.value("min_words", d.min_words);
    c.max_words = j.value("max_words", d.max_words);
    c.word_seconds = j.value("word_seconds", d.word_seconds);
    c.lead_silence_min = j.value("lead_silence_min", d.lead_silence_min);
    c.lead_silence_max = j.value("lead_silence_max", d.lead_silence_max);
    c.tail_silence = j.value("tail_silence", d.tail_silence);
    c.tone_amplitude = j.value("tone_amplitude", d.tone_amplitude);
    c.freq_jitter = j.value("freq_jitter", d.freq_jitter);
    c.sample_rate = j.value("sample_rate", d.sample_rate);
    c.train_per_domain = j.value("train_per_domain", d.train_per_domain);
    c.dev_per_domain = j.value("dev_per_domain", d.dev_per_domain);
    c.test_per_domain = j.value("test_per_domain", d.test_per_domain);
    c.domains = j.contains("domains") ? j.at("domains").get<std::vector<DomainSpec>>() : d.domains;
}

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    std::vector<std::string> words;
    std::string split;
    std::string domain;
};

struct CorpusManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;
    std::string vocab_id;

    std::filesystem::path audio_path(const ManifestEntry& e) const { return root / e.path; }

    std::vector<ManifestEntry> select(const std::string& split, const std::string& domain = "") const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries) {
            if (e.split == split && (domain.empty() || e.domain == domain)) out.push_back(e);
        }
        return out;
    }

    double mean_words(const std::string& split, const std::string& domain = "") const {
        const auto sel = select(split, domain);
        if (sel.empty()) return 0.0;
        double total = 0.0;
        for (const auto& e : sel) total += static_cast<double>(e.words.size());
        return total / static_cast<double>(sel.size());
    }
};

// Number of distinct word signatures the renderer can produce.
inline constexpr int kChirpBands = 8;
inline constexpr int kToneBands = 4;
inline constexpr int kMaxSignatures = kChirpBands * kToneBands;

struct WordSignature {
    double chirp_start_hz;
    double chirp_end_hz;
    double tone_hz;
};

inline WordSignature word_signature(int word) {
    expects(word >= 0 && word < kMaxSignatures, "no acoustic signature for word " + std::to_string(word));
    // Chirp bands log-spaced over 250..1800 Hz; tone bands well above them.
    static constexpr std::array<double, kToneBands> tones = {2400.0, 3300.0, 4400.0, 5800.0};
    const int band = word % kChirpBands;
    const double start = 250.0 * std::pow(1800.0 / 250.0, band / double(kChirpBands - 1));
    return {start, start * 1.35, tones[static_cast<std::size_t>(word / kChirpBands)]};
}

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t entry_seed(std::uint64_t seed, const std::string& split, const std::string& domain, int index) {
    std::uint64_t h = splitmix(seed);
    for (char ch : split + "/" + domain) h = splitmix(h ^ static_cast<unsigned char>(ch));
    return splitmix(h ^ static_cast<std::uint64_t>(index));
}

}  // namespace detail

// Renders one utterance. Pure function of (config, domain, words, rng state).
inline AudioSignal render_utterance(const CorpusConfig& config, const DomainSpec& domain,
                                    const std::vector<int>& words, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int rate = config.sample_rate;
    const double lead = config.lead_silence_min + (config.lead_silence_max - config.lead_silence_min) * unit(rng);
    const auto lead_n = static_cast<std::size_t>(std::lround(lead * rate));
    const auto word_n = static_cast<std::size_t>(std::lround(config.word_seconds * rate));
    const auto tail_n = static_cast<std::size_t>(std::lround(config.tail_silence * rate));
    std::vector<double> speech(lead_n + word_n * words.size() + tail_n, 0.0);

    const auto ramp_n = static_cast<std::size_t>(0.02 * rate);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t w = 0; w < words.size(); ++w) {
        const auto sig = word_signature(words[w]);
        const double jitter = 1.0 + config.freq_jitter * (2.0 * unit(rng) - 1.0);
        const double phase1 = two_pi * unit(rng);
        const double phase2 = two_pi * unit(rng);
        const double f0 = sig.chirp_start_hz * jitter, f1 = sig.chirp_end_hz * jitter;
        const double ft = sig.tone_hz * jitter;
        const double dur = config.word_seconds;
        for (std::size_t i = 0; i < word_n; ++i) {
            const double t = static_cast<double>(i) / rate;
            double env = 1.0;
            if (i < ramp_n) env = static_cast<double>(i) / ramp_n;
            if (word_n - i <= ramp_n) env = std::min(env, static_cast<double>(word_n - i - 1) / ramp_n);
            const double chirp = std::sin(phase1 + two_pi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t));
            const double tone = std::sin(phase2 + two_pi * ft * t);
            speech[lead_n + w * word_n + i] = config.tone_amplitude * env * (chirp + 0.6 * tone);
        }
    }

    double energy = 0.0;
    std::size_t active = 0;
    for (std::size_t i = lead_n; i < lead_n + word_n * words.size(); ++i) {
        energy += speech[i] * speech[i];
        ++active;
    }
    const double rms = active ? std::sqrt(energy / static_cast<double>(active)) : config.tone_amplitude;
    const double noise_std = rms / std::pow(10.0, domain.snr_db / 20.0);
    std::normal_distribution<double> noise(0.0, noise_std);

    AudioSignal out;
    out.sample_rate = rate;
    out.samples.resize(speech.size());
    for (std::size_t i = 0; i < speech.size(); ++i) {
        const double v = domain.gain * (speech[i] + noise(rng));
        out.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
    return out;
}

inline nlohmann::json manifest_line(const ManifestEntry& e) {
    return {{"path", e.path}, {"words", e.words}, {"split", e.split}, {"domain", e.domain}};
}

inline void write_manifest(const CorpusManifest& manifest, const CorpusConfig& config) {
    std::ofstream lines(manifest.root / "manifest.jsonl", std::ios::trunc);
    if (!lines) throw std::runtime_error((manifest.root / "manifest.jsonl").string() + ": cannot open for writing");
    for (const auto& e : manifest.entries) lines << manifest_line(e).dump() << '\n';
    std::ofstream meta(manifest.root / "corpus.json", std::ios::trunc);
    meta << nlohmann::json{{"seed", manifest.seed}, {"vocab_id", manifest.vocab_id}, {"config", config}}.dump(2)
         << '\n';
}

// Writes <out_dir>/audio/<split>/<domain>_NNNN.wav, manifest.jsonl and
// corpus.json. The output is a pure function of (config, seed).
inline CorpusManifest synth_corpus(const CorpusConfig& config, std::uint64_t seed,
                                   const std::filesystem::path& out_dir) {
    expects(config.vocab_size >= 1, "corpus vocabulary must be non-empty");
    if (config.vocab_size > kMaxSignatures) {
        throw ContractViolation("vocabulary of " + std::to_string(config.vocab_size) +
                                " words exceeds the " + std::to_string(kMaxSignatures) +
                                " distinct acoustic signatures");
    }
    expects(config.min_words >= 1 && config.min_words <= config.max_words, "invalid utterance length range");
    expects(!config.domains.empty(), "corpus needs at least one domain");
    expects(config.lead_silence_min >= 0 && config.lead_silence_min <= config.lead_silence_max,
            "invalid lead silence range");

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "audio", ec);
    if (ec) throw std::runtime_error(out_dir.string() + ": cannot create corpus directory: " + ec.message());

    const Vocab vocab(config.vocab_size);
    CorpusManifest manifest;
    manifest.root = out_dir;
    manifest.seed = seed;
    manifest.vocab_id = vocab.id();

    const std::vector<std::pair<std::string, int>> splits = {
        {"train", config.train_per_domain}, {"dev", config.dev_per_domain}, {"test", config.test_per_domain}};
    for (const auto& [split, count] : splits) {
        std::filesystem::create_directories(out_dir / "audio" / split, ec);
        if (ec) throw std::runtime_error(out_dir.string() + ": cannot create split directory: " + ec.message());
        for (const auto& domain : config.domains) {
            for (int i = 0; i < count; ++i) {
                std::mt19937_64 rng(detail::entry_seed(seed, split, domain.name, i));
                std::uniform_int_distribution<int> length(config.min_words, config.max_words);
                std::uniform_int_distribution<int> pick(0, config.vocab_size - 1);
                std::vector<int> words(static_cast<std::size_t>(length(rng)));
                for (auto& w : words) w = pick(rng);
                const auto audio = render_utterance(config, domain, words, rng);

                char name[64];
                std::snprintf(name, sizeof(name), "%s_%04d.wav", domain.name.c_str(), i);
                ManifestEntry e;
                e.path = "audio/" + split + "/" + name;
                for (int w : words) e.words.push_back(vocab.token(w));
                e.split = split;
                e.domain = domain.name;
                write_wav(out_dir / e.path, audio);
                manifest.entries.push_back(std::move(e));
            }
        }
    }
    write_manifest(manifest, config);
    return manifest;
}

// Loads manifest.jsonl (and corpus.json when present) from a corpus directory
// or an explicit manifest path.
inline CorpusManifest read_manifest(const std::filesystem::path& path) {
    const auto file = std::filesystem::is_directory(path) ? path / "manifest.jsonl" : path;
    std::ifstream in(file);
    if (!in) throw ParseError(file.string() + ": cannot open manifest");
    CorpusManifest m;
    m.root = file.parent_path();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        for (const char* key : {"path", "words", "split", "domain"}) {
            if (!j.contains(key)) {
                throw SchemaError(file.string() + ":" + std::to_string(lineno) + ": missing field '" + key + "'");
            }
        }
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() != "path" && it.key() != "words" && it.key() != "split" && it.key() != "domain") {
                throw SchemaError(file.string() + ":" + std::to_string(lineno) + ": unknown field '" + it.key() + "'");
            }
        }
        ManifestEntry e;
        j.at("path").get_to(e.path);
        j.at("words").get_to(e.words);
        j.at("split").get_to(e.split);
        j.at("domain").get_to(e.domain);
        if (e.split != "train" && e.split != "dev" && e.split != "test") {
            throw SchemaError(file.string() + ":" + std::to_string(lineno) + ": bad split '" + e.split + "'");
        }
        m.entries.push_back(std::move(e));
    }
    const auto meta_path = m.root / "corpus.json";
    if (std::filesystem::exists(meta_path)) {
        std::ifstream meta(meta_path);
        const auto j = nlohmann::json::parse(meta);
        m.seed = j.value("seed", std::uint64_t{0});
        m.vocab_id = j.value("vocab_id", std::string{});
    }
    return m;
}

inline CorpusConfig read_corpus_config(const std::filesystem::path& corpus_dir) {
    std::ifstream meta(corpus_dir / "corpus.json");
    if (!meta) return {};
    return nlohmann::json::parse(meta).at("config").get<CorpusConfig>();
}

}  // namespace mutelab
