#pragma once

// The mutelab command line. run_cli() never exits the process: it returns 0
// on success, 2 on usage errors (bad flags, missing or malformed inputs,
// schema violations) and 1 on runtime failures, writing one JSON error object
// to `err` in the non-zero cases.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mutelab/asr/checkpoint.hpp"
#include "mutelab/asr/dataset.hpp"
#include "mutelab/asr/train.hpp"
#include "mutelab/attack/attack.hpp"
#include "mutelab/cli/config.hpp"
#include "mutelab/eval/eval.hpp"
#include "mutelab/features/image.hpp"
#include "mutelab/saliency/saliency.hpp"
#include "mutelab/transfer/transfer.hpp"

namespace mutelab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

inline void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << j.dump(2) << '\n';
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << text;
}

inline void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw SchemaError(std::string("missing required ") + what);
    if (!fs::exists(path)) throw ParseError(path + ": " + what + " not found");
}

inline ModelConfig model_preset(const std::string& size) {
    if (size == "tiny") return ModelConfig::tiny();
    if (size == "base") return ModelConfig::base();
    throw SchemaError("unknown model size '" + size + "' (expected tiny or base)");
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// condition,mute_rate,asl
inline std::string efficacy_row(const std::string& condition, const EvalReport& r) {
    return condition + "," + fmt(r.mute_rate) + "," + fmt(r.attacked_asl) + "\n";
}

// cohort,pct,clean_asl,attacked_asl,wer,ins,del,sub (empty cells when absent)
inline std::string cohort_rows(const EvalReport& r) {
    std::string out;
    auto row = [&](const char* name, double pct, const CohortStats& c) {
        out += std::string(name) + "," + fmt(pct);
        if (!c.present) {
            out += ",,,,,,\n";
            return;
        }
        out += "," + fmt(c.clean_asl) + "," + fmt(c.attacked_asl);
        if (c.wer.defined) {
            out += "," + fmt(c.wer.wer) + "," + fmt(c.wer.ins) + "," + fmt(c.wer.del) + "," + fmt(c.wer.sub) + "\n";
        } else {
            out += ",,,,\n";
        }
    };
    row("success", r.success_pct, r.cohorts.success);
    row("failed", r.failed_pct, r.cohorts.failed);
    return out;
}

}  // namespace detail

// State shared by all subcommands, filled by CLI11.
struct CliState {
    std::string config_path;
    std::string out;
    std::vector<Override> overrides;
};

class Cli {
public:
    Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    int run(int argc, const char* const* argv);

private:
    std::ostream& out_;
    std::ostream& err_;

    LoadedConfig resolve(const CliState& s) const { return load_config(s.config_path, s.overrides); }

    void progress(const std::string& line) const { err_ << line << std::endl; }

    int synth_corpus(const CliState& s);
    int train_model(const CliState& s, const std::string& corpus);
    int train_attack(const CliState& s, const std::vector<std::string>& models, const std::string& corpus);
    int apply(const CliState& s, const std::string& segment, const std::string& in, const std::string& out);
    int evaluate(const CliState& s, const std::string& model, const std::string& corpus, const std::string& segment,
                 bool random_segment);
    int saliency(const CliState& s, const std::string& model, const std::string& corpus, const std::string& segment);
    int transfer(const CliState& s, const std::string& model_a, const std::string& model_b, const std::string& segment,
                 const std::string& corpus);
    int spectrogram(const CliState& s, const std::string& in, const std::string& segment);
};

inline int Cli::synth_corpus(const CliState& s) {
    const auto [config, resolved] = resolve(s);
    const auto dir = run_directory("synth-corpus", s.out, resolved, json::object());
    const auto manifest = mutelab::synth_corpus(config.corpus, config.seed, dir);
    write_run_stamp(dir / "run.json", "synth-corpus", resolved, json::object());
    out_ << json{{"out", dir.string()}, {"utterances", manifest.entries.size()}}.dump() << std::endl;
    return 0;
}

inline int Cli::train_model(const CliState& s, const std::string& corpus) {
    detail::require_file(corpus, "corpus");
    const auto [config, resolved] = resolve(s);
    const json inputs = {{"corpus", corpus}};
    const auto dir = run_directory("train-model", s.out, resolved, inputs);
    const auto manifest = read_manifest(corpus);
    const auto result = train_toy_model(manifest, config.train, config.seed, [&](const EpochLog& e) {
        progress("epoch " + std::to_string(e.epoch) + " loss " + detail::fmt(e.train_loss) + " dev_wer " +
                 detail::fmt(e.dev_wer) + " (" + detail::fmt(e.seconds) + " s)");
    });
    detail::write_json(dir / "train_log.json", result.report());
    save_checkpoint(result.model, dir / "model.ckpt", {{"train", result.report()}, {"corpus_seed", manifest.seed}});
    write_run_stamp(dir / "run.json", "train-model", resolved, inputs);
    out_ << json{{"out", dir.string()},
                 {"checkpoint", (dir / "model.ckpt").string()},
                 {"model_id", model_id(result.model)},
                 {"dev_wer", result.dev_wer},
                 {"best_epoch", result.best_epoch}}
                .dump()
         << std::endl;
    return 0;
}

inline int Cli::train_attack(const CliState& s, const std::vector<std::string>& model_paths,
                             const std::string& corpus) {
    if (model_paths.empty()) throw SchemaError("train-attack needs at least one --model");
    for (const auto& m : model_paths) detail::require_file(m, "model checkpoint");
    detail::require_file(corpus, "corpus");
    const auto [config, resolved] = resolve(s);
    const json inputs = {{"models", model_paths}, {"corpus", corpus}};
    const auto dir = run_directory("train-attack", s.out, resolved, inputs);

    std::vector<AsrModel> models;
    for (const auto& m : model_paths) models.push_back(load_checkpoint(m));
    std::vector<AttackTarget> targets;
    for (const auto& m : models) targets.push_back({&m, model_id(m)});

    const auto manifest = read_manifest(corpus);
    const auto& a = config.attack;
    const auto train = load_utterances(manifest, models.front().vocab(), a.train_split, a.domain,
                                       static_cast<std::size_t>(a.train_limit));
    if (train.empty()) throw SchemaError("no utterances for split '" + a.train_split + "', domain '" + a.domain + "'");
    std::vector<AudioSignal> signals;
    for (const auto& u : train) signals.push_back(u.audio);
    std::vector<AudioSignal> monitor = signals;
    if (a.monitor_limit > 0 && static_cast<std::size_t>(a.monitor_limit) < monitor.size()) {
        monitor = spread_subset(monitor, static_cast<std::size_t>(a.monitor_limit));
    }

    const auto result = train_universal(targets, signals, monitor, a, {}, [&](std::uint64_t seed,
                                                                             const AttackEpochLog& e) {
        progress("seed " + std::to_string(seed) + " epoch " + std::to_string(e.epoch) + " loss " +
                 detail::fmt(e.loss) + " mute " + detail::fmt(e.monitor_mute_rate) + "% (" + detail::fmt(e.seconds) +
                 " s)");
    });
    save_segment(result.best.segment, dir / "segment.wav", {{"attack", result.config}});
    detail::write_json(dir / "attack_log.json", {{"best_seed", result.best.segment.seed}, {"runs", result.runs}});
    write_run_stamp(dir / "run.json", "train-attack", resolved, inputs);
    out_ << json{{"out", dir.string()},
                 {"segment", (dir / "segment.wav").string()},
                 {"monitor_mute_rate", result.best.monitor_mute_rate},
                 {"final_loss", result.best.final_loss},
                 {"monotonicity_violations", result.best.monotonicity_violations.size()}}
                .dump()
         << std::endl;
    return 0;
}

inline int Cli::apply(const CliState& s, const std::string& segment, const std::string& in, const std::string& out) {
    detail::require_file(segment, "segment");
    detail::require_file(in, "input WAV");
    if (out.empty()) throw SchemaError("apply needs --out");
    if (fs::exists(out) && fs::equivalent(out, in)) throw SchemaError("apply: --out must differ from --in");
    const auto [config, resolved] = resolve(s);
    const auto seg = load_segment(segment);
    const auto audio = read_wav(in);
    const auto y = prepend(seg, audio);
    write_wav(out, y);
    fs::path stamp = out;
    stamp.replace_extension(".run.json");
    write_run_stamp(stamp, "apply", resolved, {{"segment", segment}, {"in", in}});
    out_ << json{{"out", out}, {"samples", y.size()}}.dump() << std::endl;
    return 0;
}

inline int Cli::evaluate(const CliState& s, const std::string& model_path, const std::string& corpus,
                         const std::string& segment_path, bool random) {
    detail::require_file(model_path, "model checkpoint");
    detail::require_file(corpus, "corpus");
    if (!segment_path.empty()) detail::require_file(segment_path, "segment");
    if (random && !segment_path.empty()) throw SchemaError("--segment and --random-segment are exclusive");
    const auto [config, resolved] = resolve(s);
    const json inputs = {{"model", model_path}, {"corpus", corpus}, {"segment", segment_path}, {"random", random}};
    const auto dir = run_directory("evaluate", s.out, resolved, inputs);

    const auto model = load_checkpoint(model_path);
    const auto manifest = read_manifest(corpus);
    const auto& sel = config.selection;
    const auto utts = load_utterances(manifest, model.vocab(), sel.split, sel.domain,
                                      static_cast<std::size_t>(sel.limit));
    if (utts.empty()) throw SchemaError("no utterances for split '" + sel.split + "', domain '" + sel.domain + "'");

    const auto baseline = mutelab::evaluate(model, nullptr, utts, config.eval);
    write_report(baseline, dir / "baseline", "no_attack");
    std::string table = "condition,mute_rate,asl\n" + detail::efficacy_row("no_attack", baseline);
    json summary = {{"out", dir.string()},
                    {"reference_asl", manifest.mean_words(sel.split, sel.domain)},
                    {"no_attack", {{"mute_rate", baseline.mute_rate}, {"asl", baseline.attacked_asl}}}};

    std::optional<AdversarialSegment> seg;
    if (!segment_path.empty()) seg = load_segment(segment_path);
    if (random) seg = random_segment(config.attack.length, config.attack.epsilon, config.seed);
    if (seg) {
        const std::string condition = random ? "random_segment" : "attack";
        const auto attacked = mutelab::evaluate(model, &*seg, utts, config.eval);
        write_report(attacked, dir / condition, condition);
        table += detail::efficacy_row(condition, attacked);
        detail::write_text(dir / "cohorts.csv",
                           "cohort,pct,clean_asl,attacked_asl,wer,ins,del,sub\n" + detail::cohort_rows(attacked));
        summary[condition] = {{"mute_rate", attacked.mute_rate},
                              {"asl", attacked.attacked_asl},
                              {"first_token_eot_rate", attacked.first_token_eot_rate}};
    }
    detail::write_text(dir / "table.csv", table);
    write_run_stamp(dir / "run.json", "evaluate", resolved, inputs);
    out_ << summary.dump() << std::endl;
    return 0;
}

inline int Cli::saliency(const CliState& s, const std::string& model_path, const std::string& corpus,
                         const std::string& segment_path) {
    detail::require_file(model_path, "model checkpoint");
    detail::require_file(corpus, "corpus");
    detail::require_file(segment_path, "segment");
    const auto [config, resolved] = resolve(s);
    const json inputs = {{"model", model_path}, {"corpus", corpus}, {"segment", segment_path}};
    const auto dir = run_directory("saliency", s.out, resolved, inputs);

    const auto model = load_checkpoint(model_path);
    const auto seg = load_segment(segment_path);
    const auto& sel = config.selection;
    const auto utts = load_utterances(read_manifest(corpus), model.vocab(), sel.split, sel.domain,
                                      static_cast<std::size_t>(sel.limit));
    if (utts.empty()) throw SchemaError("no utterances for split '" + sel.split + "', domain '" + sel.domain + "'");
    // The selected token comes from the greedy decode under the attack prefix.
    const auto prefix = make_prefix(model.vocab(), config.eval.task, false, config.eval.style);

    std::vector<SaliencyRecord> records;
    std::string lines;
    std::size_t skipped = 0;
    int series_success = 0, series_failed = 0;
    for (const auto& u : utts) {
        const auto t = greedy_decode(model, prepend(seg, u.audio), prefix, config.eval.max_len);
        if (config.saliency.step > t.tokens.size()) {
            ++skipped;
            continue;
        }
        auto r = mutelab::saliency(model, seg.samples, u.audio.samples, prefix, t, config.saliency.step);
        r.id = u.id;
        r.cohort = t.words.empty() ? "success" : "failed";
        int& written = r.cohort == "success" ? series_success : series_failed;
        if (written < config.saliency.series) {
            const auto name = r.cohort + "_" + std::to_string(written++);
            write_frame_saliency(frame_saliency_series(r, config.saliency.hop), dir / "series" / name,
                                 {{"id", r.id}, {"cohort", r.cohort}, {"token", r.token}});
        }
        lines += json(r).dump() + "\n";
        r.gradient.clear();
        records.push_back(std::move(r));
    }
    detail::write_text(dir / "saliency.jsonl", lines);
    const auto rows = saliency_report(records);
    std::string table = "cohort,count,segment_mean,segment_std,speech_mean,speech_std,segment_rms_mean,speech_rms_mean\n";
    for (const auto& r : rows) {
        table += r.cohort + "," + std::to_string(r.count) + "," + detail::fmt(r.segment_mean) + "," +
                 detail::fmt(r.segment_std) + "," + detail::fmt(r.speech_mean) + "," + detail::fmt(r.speech_std) +
                 "," + detail::fmt(r.segment_rms_mean) + "," + detail::fmt(r.speech_rms_mean) + "\n";
    }
    detail::write_text(dir / "table.csv", table);
    detail::write_json(dir / "cohorts.json", {{"rows", rows}, {"skipped", skipped}, {"std_kind", "population"}});
    write_run_stamp(dir / "run.json", "saliency", resolved, inputs);
    out_ << json{{"out", dir.string()}, {"rows", rows}, {"skipped", skipped}}.dump() << std::endl;
    return 0;
}

inline int Cli::transfer(const CliState& s, const std::string& path_a, const std::string& path_b,
                         const std::string& segment_path, const std::string& corpus) {
    detail::require_file(path_a, "model checkpoint");
    detail::require_file(path_b, "model checkpoint");
    if (segment_path.empty() != corpus.empty()) throw SchemaError("--segment and --corpus go together");
    if (!segment_path.empty()) {
        detail::require_file(segment_path, "segment");
        detail::require_file(corpus, "corpus");
    }
    const auto [config, resolved] = resolve(s);
    const json inputs = {{"model_a", path_a}, {"model_b", path_b}, {"segment", segment_path}, {"corpus", corpus}};
    const auto dir = run_directory("transfer", s.out, resolved, inputs);

    const auto a = load_checkpoint(path_a);
    const auto b = load_checkpoint(path_b);
    const auto rep = transfer_report(a, b, [&](const std::string& w) { progress("warning: " + w); });
    write_transfer_report(rep, dir / "transfer");
    const auto& vocab = a.vocab();
    const auto domain = real_sound_set(vocab);
    const int eot = vocab.eot();
    const std::size_t k = std::min(config.transfer.nearest, domain.size());
    write_nearest_tokens(vocab, {{eot, nearest_tokens(EmbeddingTable::of(a), domain, eot, k)}}, dir / "nearest_a.csv");
    write_nearest_tokens(vocab, {{eot, nearest_tokens(EmbeddingTable::of(b), domain, eot, k)}}, dir / "nearest_b.csv");

    json summary = {{"out", dir.string()},
                    {"eot_divergence", rep.eot_divergence},
                    {"mean", rep.threshold.mean},
                    {"std", rep.threshold.std},
                    {"tau", rep.threshold.tau},
                    {"eot_within_threshold", rep.eot_within_threshold()}};
    if (!segment_path.empty()) {
        const auto seg = load_segment(segment_path);
        const auto manifest = read_manifest(corpus);
        const auto& sel = config.selection;
        const auto utts = load_utterances(manifest, vocab, sel.split, sel.domain, static_cast<std::size_t>(sel.limit));
        if (utts.empty()) throw SchemaError("no utterances for split '" + sel.split + "', domain '" + sel.domain + "'");
        std::string table = "source,target,mute_rate,asl\n";
        for (const auto* m : {&a, &b}) {
            const auto r = cross_model_eval(seg, *m, utts, config.eval);
            const std::string tag = m == &a ? "a" : "b";
            write_report(r, dir / ("cross_" + tag), "cross_" + tag);
            const auto src = seg.models.empty() ? std::string("?") : seg.models.front();
            table += src + "," + model_id(*m) + "," + detail::fmt(r.mute_rate) + "," + detail::fmt(r.attacked_asl) + "\n";
            summary["cross_" + tag] = {{"mute_rate", r.mute_rate}, {"asl", r.attacked_asl}};
        }
        detail::write_text(dir / "cross_model.csv", table);
    }
    write_run_stamp(dir / "run.json", "transfer", resolved, inputs);
    out_ << summary.dump() << std::endl;
    return 0;
}

inline int Cli::spectrogram(const CliState& s, const std::string& in, const std::string& segment) {
    detail::require_file(in, "input WAV");
    if (!segment.empty()) detail::require_file(segment, "segment");
    const auto [config, resolved] = resolve(s);
    const json inputs = {{"in", in}, {"segment", segment}};
    const auto dir = run_directory("spectrogram", s.out, resolved, inputs);
    fs::create_directories(dir);
    const auto audio = read_wav(in);
    emit_spectrogram_image(log_mel(audio), dir / "input");
    if (!segment.empty()) {
        const auto seg = load_segment(segment);
        emit_spectrogram_image(log_mel(seg.audio()), dir / "segment");
        emit_spectrogram_image(log_mel(prepend(seg, audio)), dir / "attacked");
    }
    write_run_stamp(dir / "run.json", "spectrogram", resolved, inputs);
    out_ << json{{"out", dir.string()}}.dump() << std::endl;
    return 0;
}

inline int Cli::run(int argc, const char* const* argv) {
    CLI::App app{"mutelab: universal prepend muting attacks on a toy speech recognizer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(MUTELAB_VERSION) + " (" + MUTELAB_GIT_DESCRIBE + ")");

    CliState st;
    std::function<int()> action;

    auto common = [&](CLI::App* sub, bool out_dir = true) {
        sub->add_option("--config", st.config_path, "JSON run config (schema 1)");
        if (out_dir) sub->add_option("--out", st.out, "output directory (default: $MUTELAB_OUT_ROOT/<command>-<hash>)");
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t v) { st.overrides.push_back({"seed", v}); }, "global seed");
    };
    auto override_opt = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help,
                            auto tag) {
        using V = decltype(tag);
        sub->add_option_function<V>(flag, [&st, key](const V& v) { st.overrides.push_back({key, v}); }, help);
    };
    auto eval_opts = [&](CLI::App* sub) {
        override_opt(sub, "--split", "eval.split", "corpus split", std::string{});
        override_opt(sub, "--domain", "eval.domain", "corpus domain", std::string{});
        override_opt(sub, "--limit", "eval.limit", "utterance cap (0 = all)", int{});
        override_opt(sub, "--task", "eval.task", "transcribe or translate", std::string{});
        override_opt(sub, "--beam", "eval.beam", "beam width", std::size_t{});
        override_opt(sub, "--jobs", "eval.jobs", "parallel decoding threads", int{});
        sub->add_flag_function(
            "--greedy", [&](std::int64_t) { st.overrides.push_back({"eval.greedy", true}); }, "greedy decoding");
        sub->add_flag_function(
            "--timestamps,!--no-timestamps",
            [&](std::int64_t n) { st.overrides.push_back({"eval.timestamps", n > 0}); }, "timestamp decoding prefix");
    };

    auto* synth = app.add_subcommand("synth-corpus", "render the synthetic corpus");
    common(synth);
    override_opt(synth, "--train-per-domain", "corpus.train_per_domain", "train utterances per domain", int{});
    override_opt(synth, "--dev-per-domain", "corpus.dev_per_domain", "dev utterances per domain", int{});
    override_opt(synth, "--test-per-domain", "corpus.test_per_domain", "test utterances per domain", int{});
    synth->callback([&] { action = [&] { return synth_corpus(st); }; });

    std::string corpus, model, model_b, segment, in, out_file;
    std::vector<std::string> models;
    bool random = false;

    auto* train = app.add_subcommand("train-model", "train a toy recognizer on a corpus");
    common(train);
    train->add_option("--corpus", corpus, "corpus directory")->required();
    train->add_option_function<std::string>(
        "--size",
        [&](const std::string& v) { st.overrides.push_back({"train.model", json(detail::model_preset(v))}); },
        "tiny or base");
    override_opt(train, "--epochs", "train.epochs", "epoch budget", int{});
    override_opt(train, "--lr", "train.learning_rate", "peak learning rate", double{});
    train->callback([&] { action = [&] { return train_model(st, corpus); }; });

    auto* attack = app.add_subcommand("train-attack", "learn a universal prepend segment");
    common(attack);
    attack->add_option("--model", models, "model checkpoint (repeat for joint training)")->required();
    attack->add_option("--corpus", corpus, "corpus directory")->required();
    override_opt(attack, "--epsilon", "attack.epsilon", "L-infinity bound", double{});
    override_opt(attack, "--length", "attack.length", "segment length in samples", std::size_t{});
    override_opt(attack, "--epochs", "attack.epochs", "epoch budget (0 = 40 for tiny, 80 otherwise)", int{});
    override_opt(attack, "--lr", "attack.learning_rate", "learning rate", double{});
    override_opt(attack, "--batch-size", "attack.batch_size", "batch size", int{});
    override_opt(attack, "--restarts", "attack.restarts", "random restarts (best-of-k)", int{});
    override_opt(attack, "--init", "attack.init", "random or warm_start", std::string{});
    override_opt(attack, "--warm-start", "attack.warm_start", "segment to start from", std::string{});
    override_opt(attack, "--task", "attack.task", "transcribe or translate", std::string{});
    override_opt(attack, "--train-split", "attack.train_split", "split to train on", std::string{});
    override_opt(attack, "--domain", "attack.domain", "domain to train on", std::string{});
    override_opt(attack, "--train-limit", "attack.train_limit", "training utterance cap", int{});
    attack->callback([&] { action = [&] { return train_attack(st, models, corpus); }; });

    auto* apply_cmd = app.add_subcommand("apply", "prepend a stored segment to a WAV file");
    common(apply_cmd, false);
    apply_cmd->add_option("--segment", segment, "segment WAV (with JSON sidecar)")->required();
    apply_cmd->add_option("--in", in, "input WAV")->required();
    apply_cmd->add_option("--out", out_file, "output WAV")->required();
    apply_cmd->callback([&] { action = [&] { return apply(st, segment, in, out_file); }; });

    auto* eval = app.add_subcommand("evaluate", "measure mute rate and sequence length with and without a segment");
    common(eval);
    eval->add_option("--model", model, "model checkpoint")->required();
    eval->add_option("--corpus", corpus, "corpus directory")->required();
    eval->add_option("--segment", segment, "segment WAV");
    eval->add_flag("--random-segment", random, "evaluate a random segment with the attack's length and bound");
    override_opt(eval, "--length", "attack.length", "random segment length", std::size_t{});
    override_opt(eval, "--epsilon", "attack.epsilon", "random segment bound", double{});
    eval_opts(eval);
    eval->callback([&] { action = [&] { return evaluate(st, model, corpus, segment, random); }; });

    auto* sal = app.add_subcommand("saliency", "input-gradient saliency split at the segment boundary");
    common(sal);
    sal->add_option("--model", model, "model checkpoint")->required();
    sal->add_option("--corpus", corpus, "corpus directory")->required();
    sal->add_option("--segment", segment, "segment WAV")->required();
    override_opt(sal, "--step", "saliency.step", "generated token index (1-based)", std::size_t{});
    override_opt(sal, "--hop", "saliency.hop", "block size of the aggregated series", std::size_t{});
    override_opt(sal, "--series", "saliency.series", "per-cohort samples with a written series", int{});
    eval_opts(sal);
    sal->callback([&] { action = [&] { return saliency(st, model, corpus, segment); }; });

    auto* tr = app.add_subcommand("transfer", "embedding-geometry comparison and cross-model evaluation");
    common(tr);
    tr->add_option("--model-a", model, "first checkpoint")->required();
    tr->add_option("--model-b", model_b, "second checkpoint")->required();
    tr->add_option("--segment", segment, "segment to evaluate on both models");
    tr->add_option("--corpus", corpus, "corpus for the cross-model evaluation");
    override_opt(tr, "--nearest", "transfer.nearest", "neighbours listed per model", std::size_t{});
    eval_opts(tr);
    tr->callback([&] { action = [&] { return transfer(st, model, model_b, segment, corpus); }; });

    auto* spec = app.add_subcommand("spectrogram", "log-mel images (PGM + CSV) of a WAV, optionally with a segment");
    common(spec);
    spec->add_option("--in", in, "input WAV")->required();
    spec->add_option("--segment", segment, "segment WAV to prepend");
    spec->callback([&] { action = [&] { return spectrogram(st, in, segment); }; });

    auto fail = [&](const char* kind, const std::string& message, int code, json extra = json::object()) {
        json e = {{"error", kind}, {"message", message}, {"exit_code", code}};
        for (auto it = extra.begin(); it != extra.end(); ++it) e[it.key()] = it.value();
        err_ << e.dump() << std::endl;
        return code;
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, out_, err_);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    } catch (const SchemaError& e) {
        return fail("schema", e.what(), 2);
    }
    try {
        return action();
    } catch (const TrainingFailure& e) {
        return fail("training_failed", e.what(), 1, {{"report", e.report()}});
    } catch (const SchemaError& e) {
        return fail("schema", e.what(), 2);
    } catch (const ParseError& e) {
        return fail("input", e.what(), 2);
    } catch (const ContractViolation& e) {
        return fail("invalid_argument", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return Cli(out, err).run(argc, argv);
}

}  // namespace mutelab::cli
