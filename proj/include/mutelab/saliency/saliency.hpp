#pragma once

// Input-gradient saliency: L2 norm of d P(selected token) / d samples, split
// between the prepended segment and the speech that follows it.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/decode.hpp"
#include "mutelab/asr/model.hpp"

namespace mutelab {

// Differentiable probability of one fixed token given the raw input samples.
template <typename T>
using ProbabilityFn = std::function<BasicTensor<T>(const BasicTensor<T>& samples)>;

struct SaliencyRecord {
    std::string id;
    std::string cohort;              // "success" / "failed" / ""
    int token = -1;                  // the selected token
    std::size_t segment_length = 0;  // T
    std::size_t speech_length = 0;   // N
    double segment_norm = 0.0;       // over samples [0, T)
    double speech_norm = 0.0;        // over samples [T, T+N)
    double full_norm = 0.0;          // over all T+N samples
    std::vector<double> gradient;    // d p / d sample, length T+N

    // Root-mean-square variants: norm / sqrt(region length).
    double segment_rms() const {
        return segment_length ? segment_norm / std::sqrt(static_cast<double>(segment_length)) : 0.0;
    }
    double speech_rms() const {
        return speech_length ? speech_norm / std::sqrt(static_cast<double>(speech_length)) : 0.0;
    }
};

inline void to_json(nlohmann::json& j, const SaliencyRecord& r) {
    j = {{"id", r.id},
         {"cohort", r.cohort},
         {"token", r.token},
         {"segment_length", r.segment_length},
         {"speech_length", r.speech_length},
         {"segment_norm", r.segment_norm},
         {"speech_norm", r.speech_norm},
         {"full_norm", r.full_norm},
         {"segment_rms", r.segment_rms()},
         {"speech_rms", r.speech_rms()}};
}

// One backward pass through the concatenated input.
template <typename T>
SaliencyRecord saliency(const ProbabilityFn<T>& prob, std::span<const float> segment, std::span<const float> speech) {
    std::vector<T> joined(segment.begin(), segment.end());
    joined.insert(joined.end(), speech.begin(), speech.end());
    expects(!joined.empty(), "saliency: empty input");
    const std::size_t n = joined.size();
    const auto input = BasicTensor<T>::from({n}, std::move(joined), true);
    const auto g = backward(prob(input))[input];
    SaliencyRecord r;
    r.segment_length = segment.size();
    r.speech_length = speech.size();
    r.gradient.assign(g.begin(), g.end());
    double seg2 = 0.0, sp2 = 0.0;
    for (std::size_t i = 0; i < r.gradient.size(); ++i) {
        const double v = r.gradient[i] * r.gradient[i];
        (i < segment.size() ? seg2 : sp2) += v;
    }
    r.segment_norm = std::sqrt(seg2);
    r.speech_norm = std::sqrt(sp2);
    double full2 = 0.0;
    for (double v : r.gradient) full2 += v * v;
    r.full_norm = std::sqrt(full2);
    return r;
}

// P(token | samples, history) through the model's fixed context window.
template <typename T>
ProbabilityFn<T> token_probability(const BasicAsrModel<T>& model, std::vector<int> history, int token) {
    expects(model.vocab().contains(token), "saliency: token out of vocabulary");
    return [&model, history = std::move(history), token](const BasicTensor<T>& samples) {
        const std::size_t context = model.config().context_samples();
        BasicTensor<T> fitted = samples;
        if (samples.numel() > context) {
            fitted = slice_rows(samples, 0, context);
        } else if (samples.numel() < context) {
            fitted = concat_rows<T>({samples, BasicTensor<T>::zeros({context - samples.numel()})});
        }
        const auto p = next_token_dist(model, fitted, history);
        return pick(p, static_cast<std::size_t>(token));
    };
}

// Saliency of the m-th (1-based) token of `transcript`, decoded from
// segment ++ speech under `prefix`.
template <typename T>
SaliencyRecord saliency(const BasicAsrModel<T>& model, std::span<const float> segment, std::span<const float> speech,
                        const DecoderPrefix& prefix, const Transcript& transcript, std::size_t m = 1) {
    expects(m >= 1 && m <= transcript.tokens.size(),
            "saliency: step " + std::to_string(m) + " exceeds transcript length " +
                std::to_string(transcript.tokens.size()));
    std::vector<int> history = prefix.tokens;
    history.insert(history.end(), transcript.tokens.begin(), transcript.tokens.begin() + static_cast<std::ptrdiff_t>(m - 1));
    const int token = transcript.tokens[m - 1];
    auto r = saliency<T>(token_probability(model, std::move(history), token), segment, speech);
    r.token = token;
    return r;
}

struct SaliencyCohortRow {
    std::string cohort;
    std::size_t count = 0;
    double segment_mean = 0.0, segment_std = 0.0;
    double speech_mean = 0.0, speech_std = 0.0;
    double segment_rms_mean = 0.0, speech_rms_mean = 0.0;
};

inline void to_json(nlohmann::json& j, const SaliencyCohortRow& r) {
    j = {{"cohort", r.cohort},
         {"count", r.count},
         {"segment_mean", r.segment_mean},
         {"segment_std", r.segment_std},
         {"speech_mean", r.speech_mean},
         {"speech_std", r.speech_std},
         {"segment_rms_mean", r.segment_rms_mean},
         {"speech_rms_mean", r.speech_rms_mean}};
}

namespace detail {

inline std::pair<double, double> mean_and_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace detail

// One row per non-empty cohort, success first. Population std.
inline std::vector<SaliencyCohortRow> saliency_report(const std::vector<SaliencyRecord>& records) {
    std::vector<SaliencyCohortRow> rows;
    for (const char* cohort : {"success", "failed"}) {
        std::vector<double> seg, sp, seg_rms, sp_rms;
        for (const auto& r : records) {
            if (r.cohort != cohort) continue;
            seg.push_back(r.segment_norm);
            sp.push_back(r.speech_norm);
            seg_rms.push_back(r.segment_rms());
            sp_rms.push_back(r.speech_rms());
        }
        if (seg.empty()) continue;
        SaliencyCohortRow row;
        row.cohort = cohort;
        row.count = seg.size();
        std::tie(row.segment_mean, row.segment_std) = detail::mean_and_std(seg);
        std::tie(row.speech_mean, row.speech_std) = detail::mean_and_std(sp);
        row.segment_rms_mean = detail::mean_and_std(seg_rms).first;
        row.speech_rms_mean = detail::mean_and_std(sp_rms).first;
        rows.push_back(row);
    }
    return rows;
}

struct FrameSaliency {
    std::vector<double> per_sample;  // |gradient|, length T+N
    std::vector<double> per_frame;   // L2 norm over each hop-sized block
    std::size_t boundary = 0;        // first speech sample (= T)
    std::size_t hop = 0;

    // Share of the squared gradient mass on each side of the boundary.
    double segment_mass_fraction() const {
        double seg = 0.0, total = 0.0;
        for (std::size_t i = 0; i < per_sample.size(); ++i) {
            const double v = per_sample[i] * per_sample[i];
            total += v;
            if (i < boundary) seg += v;
        }
        return total > 0.0 ? seg / total : 0.0;
    }
};

inline FrameSaliency frame_saliency_series(const SaliencyRecord& record, std::size_t hop) {
    expects(hop > 0, "frame saliency: hop must be positive");
    FrameSaliency out;
    out.boundary = record.segment_length;
    out.hop = hop;
    out.per_sample.reserve(record.gradient.size());
    for (double g : record.gradient) out.per_sample.push_back(std::abs(g));
    for (std::size_t start = 0; start < out.per_sample.size(); start += hop) {
        double acc = 0.0;
        for (std::size_t i = start; i < std::min(out.per_sample.size(), start + hop); ++i) {
            acc += out.per_sample[i] * out.per_sample[i];
        }
        out.per_frame.push_back(std::sqrt(acc));
    }
    return out;
}

// <stem>.samples.csv (sample_index,abs_grad), <stem>.frames.csv
// (frame_index,start_sample,l2) and <stem>.json with the boundary metadata.
inline void write_frame_saliency(const FrameSaliency& s, const std::filesystem::path& stem,
                                 const nlohmann::json& extra = nlohmann::json::object()) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    auto open = [&](const char* ext) {
        auto p = stem;
        p += ext;
        std::ofstream out(p, std::ios::trunc);
        if (!out) throw std::runtime_error(p.string() + ": cannot open for writing");
        return out;
    };
    char buf[96];
    {
        auto out = open(".samples.csv");
        out << "sample_index,abs_grad\n";
        for (std::size_t i = 0; i < s.per_sample.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, s.per_sample[i]);
            out << buf;
        }
    }
    {
        auto out = open(".frames.csv");
        out << "frame_index,start_sample,l2\n";
        for (std::size_t k = 0; k < s.per_frame.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g\n", k, k * s.hop, s.per_frame[k]);
            out << buf;
        }
    }
    nlohmann::json meta = extra;
    meta["boundary_sample"] = s.boundary;
    meta["total_samples"] = s.per_sample.size();
    meta["hop"] = s.hop;
    meta["segment_mass_fraction"] = s.segment_mass_fraction();
    open(".json") << meta.dump(2) << '\n';
}

}  // namespace mutelab
