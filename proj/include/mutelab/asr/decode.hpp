#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mutelab/asr/model.hpp"
#include "mutelab/asr/vocab.hpp"

namespace mutelab {

// Source of next-token log-probabilities given the full token history
// (prefix followed by generated tokens). Decoders only see this interface,
// so tests can substitute hand-built distributions for a model.
class StepDistribution {
public:
    virtual ~StepDistribution() = default;
    virtual std::vector<double> log_probs(std::span<const int> history) const = 0;
};

// Adapter over an encoded utterance.
template <typename T>
class ModelStepDistribution final : public StepDistribution {
public:
    ModelStepDistribution(const BasicAsrModel<T>& model, EncoderState<T> encoded)
        : model_(&model), encoded_(std::move(encoded)) {}

    std::vector<double> log_probs(std::span<const int> history) const override {
        return model_->next_log_probs(encoded_, history);
    }

private:
    const BasicAsrModel<T>* model_;
    EncoderState<T> encoded_;
};

struct Transcript {
    std::vector<int> tokens;            // generated ids, eot-terminated unless truncated
    std::vector<std::string> words;     // word tokens only, detokenized
    std::vector<double> step_log_probs; // one per generated token
    bool truncated = false;             // hit max_len without eot
    double score = 0.0;                 // sum of step_log_probs

    std::size_t word_count() const { return words.size(); }
    int first_token() const { return tokens.empty() ? -1 : tokens.front(); }
};

namespace detail {

inline Transcript make_transcript(const Vocab& vocab, std::vector<int> tokens, std::vector<double> steps) {
    Transcript t;
    t.truncated = tokens.empty() || tokens.back() != vocab.eot();
    for (int id : tokens) {
        if (vocab.is_word(id)) t.words.push_back(vocab.token(id));
    }
    for (double s : steps) t.score += s;
    t.tokens = std::move(tokens);
    t.step_log_probs = std::move(steps);
    return t;
}

// Lowest id among maximal entries.
inline int argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < v.size(); ++j) {
        if (v[j] > v[best]) best = j;
    }
    return static_cast<int>(best);
}

}  // namespace detail

// max_len counts generated tokens, eot included.
inline Transcript greedy_decode(const StepDistribution& dist, const Vocab& vocab, const DecoderPrefix& prefix,
                                std::size_t max_len) {
    expects(max_len > 0, "greedy_decode: max_len must be positive");
    std::vector<int> history = prefix.tokens;
    std::vector<int> out;
    std::vector<double> steps;
    while (out.size() < max_len) {
        const auto lp = dist.log_probs(history);
        expects(lp.size() == vocab.size(), "greedy_decode: distribution size does not match vocabulary");
        const int next = detail::argmax_lowest(lp);
        out.push_back(next);
        steps.push_back(lp[static_cast<std::size_t>(next)]);
        if (next == vocab.eot()) break;
        history.push_back(next);
    }
    return detail::make_transcript(vocab, std::move(out), std::move(steps));
}

// Beam search over summed log-probabilities, no length normalization.
//
// Each step expands every live hypothesis by every token and scans the
// candidates best-first (ties: higher score, then better-ranked source beam,
// then lower token id). eot candidates met while the live set is not yet full
// are retired as finished; the first `beam` non-eot candidates stay live.
// Search stops when nothing is live, max_len is reached, or the best finished
// score is at least the best live score (extensions can only lower a score).
// At max_len the remaining live hypotheses join the pool as truncated results.
// With beam = 1 this reduces exactly to greedy decoding.
inline Transcript beam_decode(const StepDistribution& dist, const Vocab& vocab, const DecoderPrefix& prefix,
                              std::size_t beam, std::size_t max_len) {
    expects(beam >= 1, "beam_decode: beam must be at least 1");
    expects(max_len > 0, "beam_decode: max_len must be positive");
    struct Hyp {
        std::vector<int> tokens;
        std::vector<double> steps;
        double score = 0.0;
    };
    struct Candidate {
        double score;
        std::size_t source;
        int token;
    };
    std::vector<Hyp> alive(1);
    std::vector<Hyp> finished;
    const int eot = vocab.eot();

    bool stopped_early = false;
    for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
        std::vector<std::vector<double>> dists;
        std::vector<Candidate> cands;
        for (std::size_t r = 0; r < alive.size(); ++r) {
            std::vector<int> history = prefix.tokens;
            history.insert(history.end(), alive[r].tokens.begin(), alive[r].tokens.end());
            dists.push_back(dist.log_probs(history));
            expects(dists.back().size() == vocab.size(), "beam_decode: distribution size does not match vocabulary");
            for (std::size_t j = 0; j < dists.back().size(); ++j) {
                cands.push_back({alive[r].score + dists.back()[j], r, static_cast<int>(j)});
            }
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.source != b.source) return a.source < b.source;
            return a.token < b.token;
        });
        std::vector<Hyp> next;
        for (const auto& c : cands) {
            if (next.size() >= beam) break;
            Hyp h = alive[c.source];
            h.tokens.push_back(c.token);
            h.steps.push_back(dists[c.source][static_cast<std::size_t>(c.token)]);
            h.score = c.score;
            if (c.token == eot) finished.push_back(std::move(h));
            else next.push_back(std::move(h));
        }
        alive = std::move(next);
        if (!finished.empty() && !alive.empty()) {
            const double best_done =
                std::max_element(finished.begin(), finished.end(), [](const Hyp& a, const Hyp& b) {
                    return a.score < b.score;
                })->score;
            if (best_done >= alive.front().score) {
                stopped_early = true;
                break;
            }
        }
    }

    // Hypotheses still live at max_len compete as truncated transcripts.
    std::vector<Hyp> pool = std::move(finished);
    if (!stopped_early) pool.insert(pool.end(), alive.begin(), alive.end());
    const Hyp* best = &pool.front();
    for (const auto& h : pool) {
        if (h.score > best->score) best = &h;
    }
    return detail::make_transcript(vocab, best->tokens, best->steps);
}

// Generated-token budget left by the decoder's position table.
template <typename T>
std::size_t max_generated(const BasicAsrModel<T>& model, const DecoderPrefix& prefix) {
    const auto positions = static_cast<std::size_t>(model.config().max_positions);
    expects(prefix.tokens.size() < positions, "decode: prefix fills the whole position table");
    // The final generated token is never fed back, hence +1.
    return positions - prefix.tokens.size() + 1;
}

template <typename T>
Transcript greedy_decode(const BasicAsrModel<T>& model, const AudioSignal& audio, const DecoderPrefix& prefix,
                         std::size_t max_len) {
    NoGradGuard no_grad;
    const ModelStepDistribution<T> dist(model, model.encode(audio));
    return greedy_decode(dist, model.vocab(), prefix, std::min(max_len, max_generated(model, prefix)));
}

template <typename T>
Transcript beam_decode(const BasicAsrModel<T>& model, const AudioSignal& audio, const DecoderPrefix& prefix,
                       std::size_t beam, std::size_t max_len) {
    NoGradGuard no_grad;
    const ModelStepDistribution<T> dist(model, model.encode(audio));
    return beam_decode(dist, model.vocab(), prefix, beam, std::min(max_len, max_generated(model, prefix)));
}

}  // namespace mutelab
