#pragma once

// Embedding-geometry comparison between two models sharing a vocabulary:
// per-token cosine fingerprints over the real-sound tokens, their L2
// divergence, and a mean + 2 std threshold over the divergence distribution.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/model.hpp"
#include "mutelab/error.hpp"
#include "mutelab/eval/eval.hpp"

namespace mutelab {

enum class RealSoundRule {
    word_tokens,      // every non-special token
    letter_or_digit,  // non-special tokens whose text starts with [A-Za-z0-9]
};

inline std::vector<int> real_sound_set(const Vocab& vocab, RealSoundRule rule = RealSoundRule::word_tokens) {
    std::vector<int> d;
    for (int id = 0; id < static_cast<int>(vocab.size()); ++id) {
        if (vocab.is_special(id)) continue;
        if (rule == RealSoundRule::letter_or_digit) {
            const auto& s = vocab.token(id);
            if (s.empty() || !std::isalnum(static_cast<unsigned char>(s.front()))) continue;
        }
        d.push_back(id);
    }
    expects(!d.empty(), "real_sound_set: no real-sound tokens in vocabulary");
    return d;
}

// Row-major token x width table with unit-normalized rows. Rows with zero
// norm stay zero and are listed in `degenerate`.
struct EmbeddingTable {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;
    std::vector<int> degenerate;

    const double* row(int id) const { return data.data() + static_cast<std::size_t>(id) * cols; }
    bool usable(int id) const { return std::find(degenerate.begin(), degenerate.end(), id) == degenerate.end(); }

    double cosine(int a, int b) const {
        const double* x = row(a);
        const double* y = row(b);
        double s = 0.0;
        for (std::size_t k = 0; k < cols; ++k) s += x[k] * y[k];
        return std::clamp(s, -1.0, 1.0);
    }

    static EmbeddingTable normalized(std::size_t rows, std::size_t cols, std::vector<double> raw) {
        expects(raw.size() == rows * cols, "embedding table: size mismatch");
        EmbeddingTable t{rows, cols, std::move(raw), {}};
        for (std::size_t r = 0; r < rows; ++r) {
            double* x = t.data.data() + r * cols;
            double n = 0.0;
            for (std::size_t k = 0; k < cols; ++k) n += x[k] * x[k];
            n = std::sqrt(n);
            if (n == 0.0) {
                t.degenerate.push_back(static_cast<int>(r));
                continue;
            }
            for (std::size_t k = 0; k < cols; ++k) x[k] /= n;
        }
        return t;
    }

    template <typename T>
    static EmbeddingTable of(const BasicAsrModel<T>& model) {
        const auto& w = model.output_projection();
        return normalized(w.shape()[0], w.shape()[1], std::vector<double>(w.data().begin(), w.data().end()));
    }
};

struct Fingerprint {
    int token = -1;
    std::vector<int> domain;     // token ids the values are indexed by
    std::vector<double> values;  // cosine(w_i, w_token) for i in domain
};

// Degenerate (zero-norm) rows are dropped from the domain; `warn` is told.
inline Fingerprint fingerprint(const EmbeddingTable& table, const std::vector<int>& domain, int token,
                               const std::function<void(const std::string&)>& warn = {}) {
    expects(token >= 0 && static_cast<std::size_t>(token) < table.rows, "fingerprint: token out of range");
    expects(table.usable(token), "fingerprint: token " + std::to_string(token) + " has a zero-norm row");
    Fingerprint f;
    f.token = token;
    for (int i : domain) {
        expects(i >= 0 && static_cast<std::size_t>(i) < table.rows, "fingerprint: domain token out of range");
        if (!table.usable(i)) {
            if (warn) warn("token " + std::to_string(i) + " has a zero-norm row; excluded");
            continue;
        }
        f.domain.push_back(i);
        f.values.push_back(table.cosine(i, token));
    }
    return f;
}

inline double divergence(const Fingerprint& a, const Fingerprint& b) {
    expects(a.domain == b.domain, "divergence: fingerprints are indexed by different token sets");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return std::sqrt(s);
}

// Domain restricted to rows usable in both tables, so fingerprints line up.
inline std::vector<int> shared_domain(const EmbeddingTable& a, const EmbeddingTable& b, const std::vector<int>& domain,
                                      const std::function<void(const std::string&)>& warn = {}) {
    std::vector<int> out;
    for (int i : domain) {
        if (a.usable(i) && b.usable(i)) {
            out.push_back(i);
        } else if (warn) {
            warn("token " + std::to_string(i) + " has a zero-norm row; excluded");
        }
    }
    return out;
}

inline double divergence(const EmbeddingTable& a, const EmbeddingTable& b, const std::vector<int>& domain, int token) {
    expects(a.rows == b.rows, "divergence: vocabulary size mismatch");
    return divergence(fingerprint(a, domain, token), fingerprint(b, domain, token));
}

struct Threshold {
    double mean = 0.0;
    double std = 0.0;  // population
    double tau = 0.0;
};

inline Threshold transfer_threshold(const std::vector<double>& divergences) {
    expects(divergences.size() >= 2, "transfer_threshold: need at least two real-sound tokens");
    Threshold t;
    for (double v : divergences) t.mean += v;
    t.mean /= static_cast<double>(divergences.size());
    double var = 0.0;
    for (double v : divergences) var += (v - t.mean) * (v - t.mean);
    t.std = std::sqrt(var / static_cast<double>(divergences.size()));
    t.tau = t.mean + 2.0 * t.std;
    return t;
}

struct TransferReport {
    std::string model_a, model_b;
    std::vector<int> domain;
    std::vector<double> divergences;  // one per domain token
    double eot_divergence = 0.0;
    Threshold threshold;

    // The eot geometry moves no more than a typical real-sound token.
    bool eot_within_threshold() const { return eot_divergence <= threshold.tau; }
};

inline void to_json(nlohmann::json& j, const TransferReport& r) {
    j = {{"model_a", r.model_a},
         {"model_b", r.model_b},
         {"domain", r.domain},
         {"divergences", r.divergences},
         {"eot_divergence", r.eot_divergence},
         {"mean", r.threshold.mean},
         {"std", r.threshold.std},
         {"std_kind", "population"},
         {"tau", r.threshold.tau},
         {"eot_within_threshold", r.eot_within_threshold()}};
}

inline TransferReport transfer_report(const EmbeddingTable& a, const EmbeddingTable& b, const std::vector<int>& domain,
                                      int eot, const std::function<void(const std::string&)>& warn = {}) {
    expects(a.rows == b.rows, "transfer: vocabulary size mismatch");
    TransferReport r;
    r.domain = shared_domain(a, b, domain, warn);
    for (int tok : r.domain) r.divergences.push_back(divergence(a, b, r.domain, tok));
    r.eot_divergence = divergence(a, b, r.domain, eot);
    r.threshold = transfer_threshold(r.divergences);
    return r;
}

template <typename T>
TransferReport transfer_report(const BasicAsrModel<T>& a, const BasicAsrModel<T>& b,
                               const std::function<void(const std::string&)>& warn = {}) {
    if (!(a.vocab() == b.vocab())) throw SchemaError("transfer: models use different vocabularies");
    auto r = transfer_report(EmbeddingTable::of(a), EmbeddingTable::of(b), real_sound_set(a.vocab()), a.vocab().eot(),
                             warn);
    r.model_a = model_id(a);
    r.model_b = model_id(b);
    return r;
}

struct Neighbour {
    int token = -1;
    double cosine = 0.0;
};

// Top-k domain tokens by cosine to `token`, excluding it; ties to lower id.
inline std::vector<Neighbour> nearest_tokens(const EmbeddingTable& table, const std::vector<int>& domain, int token,
                                             std::size_t k = 5) {
    expects(token >= 0 && static_cast<std::size_t>(token) < table.rows, "nearest_tokens: token out of range");
    std::vector<Neighbour> all;
    for (int i : domain) {
        if (i == token || !table.usable(i)) continue;
        all.push_back({i, table.cosine(i, token)});
    }
    expects(k <= all.size(), "nearest_tokens: k = " + std::to_string(k) + " exceeds the " +
                                 std::to_string(all.size()) + " candidate tokens");
    std::stable_sort(all.begin(), all.end(), [](const Neighbour& x, const Neighbour& y) {
        if (x.cosine != y.cosine) return x.cosine > y.cosine;
        return x.token < y.token;
    });
    all.resize(k);
    return all;
}

// A segment trained elsewhere, evaluated on `target`.
inline EvalReport cross_model_eval(const AdversarialSegment& segment, const AsrModel& target,
                                   const std::vector<Utterance>& utterances, const EvalOptions& options) {
    if (segment.sample_rate != target.config().mel.sample_rate) {
        throw SchemaError("cross-model eval: segment sample rate differs from the target model");
    }
    auto rep = evaluate(target, &segment, utterances, options);
    rep.meta["target_model"] = model_id(target);
    return rep;
}

// <stem>.json plus <stem>.csv: pair,eot_divergence,mean,std,tau,eot_within_threshold
inline void write_transfer_report(const TransferReport& r, const std::filesystem::path& stem) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    auto json_path = stem, csv_path = stem;
    json_path += ".json";
    csv_path += ".csv";
    std::ofstream js(json_path, std::ios::trunc), csv(csv_path, std::ios::trunc);
    if (!js || !csv) throw std::runtime_error(stem.string() + ": cannot open transfer report for writing");
    js << nlohmann::json(r).dump(2) << '\n';
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s|%s,%.6f,%.6f,%.6f,%.6f,%d\n", r.model_a.c_str(), r.model_b.c_str(),
                  r.eot_divergence, r.threshold.mean, r.threshold.std, r.threshold.tau, r.eot_within_threshold());
    csv << "pair,eot_divergence,mean,std_population,tau,eot_within_threshold\n" << buf;
}

// CSV rows: query,rank,token,word,cosine
inline void write_nearest_tokens(const Vocab& vocab, const std::vector<std::pair<int, std::vector<Neighbour>>>& tables,
                                 const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << "query,rank,token,word,cosine\n";
    char buf[256];
    for (const auto& [query, list] : tables) {
        for (std::size_t i = 0; i < list.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s,%zu,%d,%s,%.6f\n", vocab.token(query).c_str(), i + 1, list[i].token,
                          vocab.token(list[i].token).c_str(), list[i].cosine);
            out << buf;
        }
    }
}

}  // namespace mutelab
