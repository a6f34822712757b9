#pragma once

#include <array>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mutelab/error.hpp"

namespace mutelab {

enum class Task { transcribe, translate };

inline std::string to_string(Task task) { return task == Task::transcribe ? "transcribe" : "translate"; }

inline Task parse_task(std::string_view s) {
    if (s == "transcribe") return Task::transcribe;
    if (s == "translate") return Task::translate;
    throw SchemaError("unknown task '" + std::string(s) + "' (expected transcribe or translate)");
}

// Word tokens first (dense ids 0..words-1), then the special tokens in the
// order eot, sot, language, transcribe, translate, notimestamps, <|0.00|>.
class Vocab {
public:
    static constexpr std::array<std::string_view, 32> kWordNames = {
        "alpha", "bravo",   "charlie", "delta",  "echo",    "foxtrot", "golf",  "hotel",
        "india", "juliett", "kilo",    "lima",   "mike",    "november", "oscar", "papa",
        "quebec", "romeo",  "sierra",  "tango",  "uniform", "victor",  "whiskey", "xray",
        "yankee", "zulu",   "one",     "two",    "three",   "four",    "five",  "six"};

    static constexpr std::array<std::string_view, 7> kSpecialNames = {
        "<|endoftext|>", "<|startoftranscript|>", "<|en|>",       "<|transcribe|>",
        "<|translate|>", "<|notimestamps|>",      "<|0.00|>"};

    Vocab() : Vocab(32) {}

    explicit Vocab(int word_count) : words_(word_count) {
        expects(word_count >= 1, "vocabulary needs at least one word token");
        for (int i = 0; i < word_count; ++i) {
            tokens_.push_back(i < static_cast<int>(kWordNames.size()) ? std::string(kWordNames[i])
                                                                      : "tok" + std::to_string(i));
        }
        for (auto s : kSpecialNames) tokens_.emplace_back(s);
    }

    std::size_t size() const { return tokens_.size(); }
    int word_count() const { return words_; }
    const std::string& token(int id) const {
        expects(contains(id), "token id " + std::to_string(id) + " out of vocabulary");
        return tokens_[static_cast<std::size_t>(id)];
    }
    const std::vector<std::string>& tokens() const { return tokens_; }
    bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }
    bool is_word(int id) const { return id >= 0 && id < words_; }
    bool is_special(int id) const { return contains(id) && !is_word(id); }

    int eot() const { return words_; }
    int sot() const { return words_ + 1; }
    int language() const { return words_ + 2; }
    int transcribe() const { return words_ + 3; }
    int translate() const { return words_ + 4; }
    int notimestamps() const { return words_ + 5; }
    int timestamp0() const { return words_ + 6; }
    int task_token(Task t) const { return t == Task::transcribe ? transcribe() : translate(); }

    std::string id() const { return "toy-words-" + std::to_string(words_) + "-v1"; }

    std::optional<int> find(std::string_view name) const {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i] == name) return static_cast<int>(i);
        }
        return std::nullopt;
    }

    int word_id(std::string_view name) const {
        auto id = find(name);
        if (!id || !is_word(*id)) {
            throw SchemaError("'" + std::string(name) + "' is not a word token of " + this->id());
        }
        return *id;
    }

    std::vector<int> encode(const std::vector<std::string>& words) const {
        std::vector<int> out;
        out.reserve(words.size());
        for (const auto& w : words) out.push_back(word_id(w));
        return out;
    }

    // Word tokens only; special tokens are dropped.
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        for (int id : ids) {
            if (is_word(id)) out.push_back(tokens_[static_cast<std::size_t>(id)]);
        }
        return out;
    }

    // The toy translation: a fixed permutation of the word tokens.
    int translate_word(int word) const {
        expects(is_word(word), "translate_word: not a word token");
        if (std::gcd(7, words_) == 1) return (7 * word + 3) % words_;
        return (word + 1) % words_;
    }

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

    nlohmann::json to_json() const { return {{"id", id()}, {"word_count", words_}}; }

    static Vocab from_json(const nlohmann::json& j) {
        Vocab v(j.at("word_count").get<int>());
        if (j.at("id").get<std::string>() != v.id()) throw SchemaError("vocabulary id mismatch");
        return v;
    }

private:
    int words_;
    std::vector<std::string> tokens_;
};

enum class PrefixStyle { multilingual, english_only };

// y*_0: start-of-transcript, then language and task for the multilingual
// style, then <|notimestamps|> when timestamps are off.
struct DecoderPrefix {
    std::vector<int> tokens;
};

inline DecoderPrefix make_prefix(const Vocab& vocab, Task task, bool timestamps,
                                 PrefixStyle style = PrefixStyle::multilingual) {
    DecoderPrefix p;
    p.tokens.push_back(vocab.sot());
    if (style == PrefixStyle::multilingual) {
        p.tokens.push_back(vocab.language());
        p.tokens.push_back(vocab.task_token(task));
    }
    if (!timestamps) p.tokens.push_back(vocab.notimestamps());
    return p;
}

// Teacher-forcing targets for a reference word sequence: the task-mapped
// words, led by <|0.00|> in timestamp mode, terminated by eot.
inline std::vector<int> task_targets(const Vocab& vocab, const std::vector<int>& words, Task task,
                                     bool timestamps) {
    std::vector<int> out;
    if (timestamps) out.push_back(vocab.timestamp0());
    for (int w : words) out.push_back(task == Task::transcribe ? w : vocab.translate_word(w));
    out.push_back(vocab.eot());
    return out;
}

}  // namespace mutelab
