#pragma once

// Attack evaluation: mute rate, average sequence length, failed-cohort WER
// against the no-attack transcript, and report serialization.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/dataset.hpp"
#include "mutelab/asr/decode.hpp"
#include "mutelab/attack/segment.hpp"
#include "mutelab/eval/wer.hpp"

namespace mutelab {

struct EvalOptions {
    Task task = Task::transcribe;
    bool timestamps = true;
    PrefixStyle style = PrefixStyle::multilingual;
    std::size_t beam = 5;
    bool greedy = false;
    std::size_t max_len = 24;
    int jobs = 1;
};

inline void to_json(nlohmann::json& j, const EvalOptions& o) {
    j = {{"task", to_string(o.task)},
         {"timestamps", o.timestamps},
         {"prefix_style", o.style == PrefixStyle::multilingual ? "multilingual" : "english_only"},
         {"beam", o.beam},
         {"greedy", o.greedy},
         {"max_len", o.max_len},
         {"jobs", o.jobs}};
}

inline void from_json(const nlohmann::json& j, EvalOptions& o) {
    const EvalOptions d;
    o.task = parse_task(j.value("task", to_string(d.task)));
    o.timestamps = j.value("timestamps", d.timestamps);
    const auto style = j.value("prefix_style", std::string("multilingual"));
    if (style != "multilingual" && style != "english_only") {
        throw SchemaError("unknown prefix_style '" + style + "' (expected multilingual or english_only)");
    }
    o.style = style == "multilingual" ? PrefixStyle::multilingual : PrefixStyle::english_only;
    o.beam = j.value("beam", d.beam);
    o.greedy = j.value("greedy", d.greedy);
    o.max_len = j.value("max_len", d.max_len);
    o.jobs = j.value("jobs", d.jobs);
}

struct EvalRecord {
    std::string id;
    std::string domain;
    Task task = Task::transcribe;
    std::vector<std::string> reference;
    std::vector<std::string> clean;     // no-attack transcript words
    std::vector<std::string> attacked;  // attacked transcript words
    std::vector<int> attacked_tokens;
    bool first_token_eot = false;       // literal check on the first generated token
    bool success = false;               // attacked transcript has zero words

    std::size_t clean_words() const { return clean.size(); }
    std::size_t attacked_words() const { return attacked.size(); }
};

inline void to_json(nlohmann::json& j, const EvalRecord& r) {
    j = {{"id", r.id},
         {"domain", r.domain},
         {"task", to_string(r.task)},
         {"reference", r.reference},
         {"clean", r.clean},
         {"attacked", r.attacked},
         {"attacked_tokens", r.attacked_tokens},
         {"first_token_eot", r.first_token_eot},
         {"success", r.success},
         {"clean_words", r.clean_words()},
         {"attacked_words", r.attacked_words()}};
}

// Percentage of records with an empty attacked transcript.
inline double mute_rate(const std::vector<EvalRecord>& records) {
    expects(!records.empty(), "mute_rate: no records");
    std::size_t hits = 0;
    for (const auto& r : records) hits += r.success;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

// Mean word count.
inline double avg_seq_len(const std::vector<std::vector<std::string>>& transcripts) {
    expects(!transcripts.empty(), "avg_seq_len: no transcripts");
    std::size_t total = 0;
    for (const auto& t : transcripts) total += t.size();
    return static_cast<double>(total) / static_cast<double>(transcripts.size());
}

struct CohortStats {
    bool present = false;
    std::size_t count = 0;
    double clean_asl = 0.0;
    double attacked_asl = 0.0;
    WerBreakdown wer;                 // attacked vs. no-attack transcript, corpus-level
    std::size_t wer_excluded = 0;     // records with an empty no-attack transcript
};

inline void to_json(nlohmann::json& j, const CohortStats& c) {
    if (!c.present) {
        j = {{"present", false}};
        return;
    }
    j = {{"present", true},
         {"count", c.count},
         {"clean_asl", c.clean_asl},
         {"attacked_asl", c.attacked_asl},
         {"wer", c.wer},
         {"wer_excluded", c.wer_excluded}};
}

struct CohortReport {
    CohortStats success;
    CohortStats failed;
};

inline CohortStats cohort_stats(const std::vector<const EvalRecord*>& members) {
    CohortStats c;
    if (members.empty()) return c;
    c.present = true;
    c.count = members.size();
    std::size_t clean_words = 0, attacked_words = 0;
    EditCounts counts;
    for (const auto* r : members) {
        clean_words += r->clean_words();
        attacked_words += r->attacked_words();
        if (r->clean.empty()) {
            ++c.wer_excluded;
            continue;
        }
        counts += edit_counts(r->clean, r->attacked);
    }
    c.clean_asl = static_cast<double>(clean_words) / static_cast<double>(c.count);
    c.attacked_asl = static_cast<double>(attacked_words) / static_cast<double>(c.count);
    c.wer = to_breakdown(counts);
    return c;
}

inline CohortReport cohort_report(const std::vector<EvalRecord>& records) {
    std::vector<const EvalRecord*> ok, bad;
    for (const auto& r : records) (r.success ? ok : bad).push_back(&r);
    return {cohort_stats(ok), cohort_stats(bad)};
}

struct EvalReport {
    std::vector<EvalRecord> records;
    std::size_t count = 0;
    bool attacked = false;
    double mute_rate = 0.0;
    double first_token_eot_rate = 0.0;
    double clean_asl = 0.0;
    double attacked_asl = 0.0;
    double success_pct = 0.0;
    double failed_pct = 0.0;
    WerBreakdown clean_vs_reference;
    CohortReport cohorts;
    nlohmann::json meta = nlohmann::json::object();

    nlohmann::json aggregate() const {
        return {{"count", count},
                {"attacked", attacked},
                {"mute_rate", mute_rate},
                {"first_token_eot_rate", first_token_eot_rate},
                {"clean_asl", clean_asl},
                {"attacked_asl", attacked_asl},
                {"success_pct", success_pct},
                {"failed_pct", failed_pct},
                {"clean_vs_reference", clean_vs_reference},
                {"cohorts", {{"success", cohorts.success}, {"failed", cohorts.failed}}},
                {"meta", meta}};
    }
};

// Aggregates in record order; every aggregate is a ratio of integer counts,
// so permuting the records leaves it bit-identical.
inline EvalReport summarize(std::vector<EvalRecord> records, bool attacked) {
    expects(!records.empty(), "evaluate: no records");
    EvalReport rep;
    rep.attacked = attacked;
    rep.count = records.size();
    std::size_t success = 0, first_eot = 0, clean_words = 0, attacked_words = 0;
    EditCounts ref_counts;
    for (const auto& r : records) {
        success += r.success;
        first_eot += r.first_token_eot;
        clean_words += r.clean_words();
        attacked_words += r.attacked_words();
        ref_counts += edit_counts(r.reference, r.clean);
    }
    const double n = static_cast<double>(rep.count);
    rep.mute_rate = 100.0 * static_cast<double>(success) / n;
    rep.first_token_eot_rate = 100.0 * static_cast<double>(first_eot) / n;
    rep.clean_asl = static_cast<double>(clean_words) / n;
    rep.attacked_asl = static_cast<double>(attacked_words) / n;
    rep.success_pct = rep.mute_rate;
    rep.failed_pct = 100.0 * static_cast<double>(rep.count - success) / n;
    rep.clean_vs_reference = to_breakdown(ref_counts);
    rep.records = std::move(records);
    rep.cohorts = cohort_report(rep.records);
    return rep;
}

inline Transcript decode_with(const AsrModel& model, const AudioSignal& audio, const DecoderPrefix& prefix,
                              const EvalOptions& o) {
    return o.greedy ? greedy_decode(model, audio, prefix, o.max_len)
                    : beam_decode(model, audio, prefix, o.beam, o.max_len);
}

// Evaluates `segment` (or the no-attack baseline when null) on `utterances`.
inline EvalReport evaluate(const AsrModel& model, const AdversarialSegment* segment,
                           const std::vector<Utterance>& utterances, const EvalOptions& options) {
    expects(!utterances.empty(), "evaluate: no utterances");
    if (segment) {
        expects(segment->sample_rate == model.config().mel.sample_rate, "evaluate: segment sample rate mismatch");
    }
    const Vocab& vocab = model.vocab();
    const auto prefix = make_prefix(vocab, options.task, options.timestamps, options.style);
    std::vector<EvalRecord> records(utterances.size());

    auto work = [&](std::size_t i) {
        const auto& u = utterances[i];
        EvalRecord r;
        r.id = u.id;
        r.domain = u.domain;
        r.task = options.task;
        for (int w : u.words) r.reference.push_back(vocab.token(options.task == Task::transcribe ? w : vocab.translate_word(w)));
        const auto clean = decode_with(model, u.audio, prefix, options);
        r.clean = clean.words;
        Transcript attacked = clean;
        if (segment) attacked = decode_with(model, prepend(*segment, u.audio), prefix, options);
        r.attacked = attacked.words;
        r.attacked_tokens = attacked.tokens;
        r.first_token_eot = attacked.first_token() == vocab.eot();
        r.success = attacked.words.empty();
        records[i] = std::move(r);
    };

    const std::size_t jobs = static_cast<std::size_t>(std::max(1, options.jobs));
    if (jobs == 1) {
        for (std::size_t i = 0; i < utterances.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (std::size_t t = 0; t < jobs; ++t) {
            pool.emplace_back([&] {
                try {
                    for (std::size_t i = next++; i < utterances.size(); i = next++) work(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    auto rep = summarize(std::move(records), segment != nullptr);
    rep.meta["options"] = options;
    rep.meta["model"] = model.config().name;
    if (segment) {
        rep.meta["segment"] = {{"length", segment->length()},
                               {"epsilon", segment->epsilon},
                               {"seed", segment->seed},
                               {"models", segment->models},
                               {"config_hash", segment->config_hash}};
    }
    return rep;
}

// <stem>.json (aggregate), <stem>.jsonl (records), <stem>.csv (summary row).
inline void write_report(const EvalReport& rep, const std::filesystem::path& stem, const std::string& condition) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    auto with = [&](const char* ext) {
        auto p = stem;
        p += ext;
        std::ofstream out(p, std::ios::trunc);
        if (!out) throw std::runtime_error(p.string() + ": cannot open for writing");
        return out;
    };
    auto agg = rep.aggregate();
    agg["condition"] = condition;
    with(".json") << agg.dump(2) << '\n';
    {
        auto out = with(".jsonl");
        for (const auto& r : rep.records) out << nlohmann::json(r).dump() << '\n';
    }
    auto csv = with(".csv");
    csv << "condition,count,mute_rate,first_token_eot_rate,clean_asl,attacked_asl,failed_wer,failed_ins,failed_del,"
           "failed_sub\n";
    const auto& f = rep.cohorts.failed.wer;
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", condition.c_str(), rep.count,
                  rep.mute_rate, rep.first_token_eot_rate, rep.clean_asl, rep.attacked_asl, f.wer, f.ins, f.del, f.sub);
    csv << buf;
}

}  // namespace mutelab
