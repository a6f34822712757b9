#pragma once

#include <string>
#include <vector>

#include "mutelab/asr/vocab.hpp"
#include "mutelab/audio/corpus.hpp"

namespace mutelab {

struct Utterance {
    std::string id;  // manifest path, unique within a corpus
    std::string domain;
    AudioSignal audio;
    std::vector<int> words;
};

// Loads a manifest slice into memory, in manifest order. `limit` = 0 keeps all.
inline std::vector<Utterance> load_utterances(const CorpusManifest& manifest, const Vocab& vocab,
                                              const std::string& split, const std::string& domain = "",
                                              std::size_t limit = 0) {
    if (!manifest.vocab_id.empty() && manifest.vocab_id != vocab.id()) {
        throw SchemaError("corpus vocabulary '" + manifest.vocab_id + "' does not match model vocabulary '" +
                          vocab.id() + "'");
    }
    std::vector<Utterance> out;
    for (const auto& e : manifest.select(split, domain)) {
        if (limit && out.size() >= limit) break;
        Utterance u;
        u.id = e.path;
        u.domain = e.domain;
        u.audio = read_wav(manifest.audio_path(e));
        for (const auto& w : e.words) u.words.push_back(vocab.word_id(w));
        out.push_back(std::move(u));
    }
    return out;
}

// Evenly spaced subset of at most `limit` items (all when limit = 0), so a
// capped dev set still covers every domain.
template <typename T>
std::vector<T> spread_subset(const std::vector<T>& items, std::size_t limit) {
    if (limit == 0 || items.size() <= limit) return items;
    std::vector<T> out;
    out.reserve(limit);
    for (std::size_t i = 0; i < limit; ++i) out.push_back(items[i * items.size() / limit]);
    return out;
}

}  // namespace mutelab
