#pragma once

// Teacher-forced training of the toy recognizer on a synthetic corpus.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/dataset.hpp"
#include "mutelab/asr/decode.hpp"
#include "mutelab/asr/model.hpp"
#include "mutelab/eval/wer.hpp"
#include "mutelab/numerics/adamw.hpp"

namespace mutelab {

struct TrainConfig {
    ModelConfig model;
    int epochs = 16;
    int batch_size = 16;
    double learning_rate = 2e-3;
    double weight_decay = 0.01;
    int warmup_steps = 60;
    double final_lr_fraction = 0.05;
    double grad_clip = 1.0;
    double translate_fraction = 0.25;
    double timestamp_fraction = 0.5;
    // Extra inputs with no words at all (silence or faint noise), target eot.
    double nonspeech_fraction = 0.05;
    // Fraction of utterances given a random white-noise lead-in, so that the
    // model is not thrown by arbitrary low-level audio before speech.
    double noise_lead_fraction = 0.3;
    double noise_lead_max_amplitude = 0.03;
    double noise_lead_max_seconds = 0.8;
    double dev_wer_threshold = 5.0;  // percent
    int dev_limit = 160;
    bool require_convergence = true;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"model", c.model},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"weight_decay", c.weight_decay},
         {"warmup_steps", c.warmup_steps},
         {"final_lr_fraction", c.final_lr_fraction},
         {"grad_clip", c.grad_clip},
         {"translate_fraction", c.translate_fraction},
         {"timestamp_fraction", c.timestamp_fraction},
         {"nonspeech_fraction", c.nonspeech_fraction},
         {"noise_lead_fraction", c.noise_lead_fraction},
         {"noise_lead_max_amplitude", c.noise_lead_max_amplitude},
         {"noise_lead_max_seconds", c.noise_lead_max_seconds},
         {"dev_wer_threshold", c.dev_wer_threshold},
         {"dev_limit", c.dev_limit},
         {"require_convergence", c.require_convergence}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.model = j.value("model", d.model);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    c.final_lr_fraction = j.value("final_lr_fraction", d.final_lr_fraction);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.translate_fraction = j.value("translate_fraction", d.translate_fraction);
    c.timestamp_fraction = j.value("timestamp_fraction", d.timestamp_fraction);
    c.nonspeech_fraction = j.value("nonspeech_fraction", d.nonspeech_fraction);
    c.noise_lead_fraction = j.value("noise_lead_fraction", d.noise_lead_fraction);
    c.noise_lead_max_amplitude = j.value("noise_lead_max_amplitude", d.noise_lead_max_amplitude);
    c.noise_lead_max_seconds = j.value("noise_lead_max_seconds", d.noise_lead_max_seconds);
    c.dev_wer_threshold = j.value("dev_wer_threshold", d.dev_wer_threshold);
    c.dev_limit = j.value("dev_limit", d.dev_limit);
    c.require_convergence = j.value("require_convergence", d.require_convergence);
}

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_wer = 0.0;
    double learning_rate = 0.0;
    double seconds = 0.0;  // wall clock, not serialized
};

inline void to_json(nlohmann::json& j, const EpochLog& e) {
    j = {{"epoch", e.epoch},
         {"train_loss", e.train_loss},
         {"dev_wer", e.dev_wer},
         {"learning_rate", e.learning_rate}};
}

struct TrainResult {
    AsrModel model;
    std::vector<EpochLog> log;
    double dev_wer = 100.0;
    int best_epoch = 0;
    bool converged = false;

    nlohmann::json report() const {
        return {{"converged", converged}, {"dev_wer", dev_wer}, {"best_epoch", best_epoch}, {"epochs", log}};
    }
};

// Thrown when the budget runs out above the WER threshold; carries the full
// loss/WER curve.
class TrainingFailure : public std::runtime_error {
public:
    TrainingFailure(const std::string& what, nlohmann::json report)
        : std::runtime_error(what), report_(std::move(report)) {}
    const nlohmann::json& report() const { return report_; }

private:
    nlohmann::json report_;
};

inline std::vector<float> context_mel(const AsrModel& model, std::span<const float> samples) {
    NoGradGuard no_grad;
    const auto fitted = model.fit_context(samples);
    return model.front_end()(Tensor::from({fitted.size()}, fitted)).values();
}

// Corpus-level WER (percent) of greedy transcribe/notimestamps decodes.
inline EditCounts greedy_edit_counts(const AsrModel& model, const std::vector<Utterance>& utts) {
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, false);
    EditCounts total;
    for (const auto& u : utts) {
        const auto t = greedy_decode(model, u.audio, prefix, 32);
        std::vector<int> hyp;
        for (int id : t.tokens) {
            if (model.vocab().is_word(id)) hyp.push_back(id);
        }
        total += edit_counts(u.words, hyp);
    }
    return total;
}

inline double learning_rate_at(const TrainConfig& c, std::int64_t step, std::int64_t total_steps) {
    if (step < c.warmup_steps) return c.learning_rate * static_cast<double>(step + 1) / c.warmup_steps;
    const double span = std::max<std::int64_t>(1, total_steps - c.warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return c.learning_rate * (c.final_lr_fraction + (1.0 - c.final_lr_fraction) * cosine);
}

inline TrainResult train_toy_model(const CorpusManifest& corpus, const TrainConfig& config, std::uint64_t seed,
                                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
    expects(config.epochs >= 1 && config.batch_size >= 1, "train: epochs and batch size must be positive");
    AsrModel model(config.model, seed);
    const Vocab& vocab = model.vocab();
    const auto train = load_utterances(corpus, vocab, "train");
    expects(!train.empty(), "train: corpus has no train split");
    const auto dev = spread_subset(load_utterances(corpus, vocab, "dev"), static_cast<std::size_t>(config.dev_limit));

    std::vector<std::vector<float>> cached_mel;
    cached_mel.reserve(train.size());
    for (const auto& u : train) cached_mel.push_back(context_mel(model, u.audio.samples));
    const std::size_t frames = config.model.mel_frames(), bins = config.model.mel.n_mels;
    const std::size_t context = config.model.context_samples();
    const int rate = config.model.mel.sample_rate;

    auto params = model.parameters();
    AdamW<float> opt(params, {config.learning_rate, config.weight_decay});
    const std::size_t nonspeech = static_cast<std::size_t>(std::lround(config.nonspeech_fraction * train.size()));
    const std::size_t per_epoch = train.size() + nonspeech;
    const std::size_t steps_per_epoch = (per_epoch + config.batch_size - 1) / config.batch_size;
    const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * config.epochs;

    TrainResult result{model.cast<float>(), {}, 100.0, 0, false};
    std::vector<std::vector<float>> best_values;
    std::mt19937_64 rng(seed ^ 0x7f4a7c159e3779b9ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(per_epoch);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t loss_count = 0;

        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
            std::vector<std::vector<float>> grads(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i].numel(), 0.0f);

            for (std::size_t k = b; k < end; ++k) {
                const std::size_t idx = order[k];
                const Task task = unit(rng) < config.translate_fraction ? Task::translate : Task::transcribe;
                const bool timestamps = unit(rng) < config.timestamp_fraction;
                std::vector<int> words;
                Tensor mel;
                if (idx < train.size()) {
                    words = train[idx].words;
                    if (unit(rng) < config.noise_lead_fraction) {
                        const double amp = unit(rng) * config.noise_lead_max_amplitude;
                        const auto len = static_cast<std::size_t>(unit(rng) * config.noise_lead_max_seconds * rate);
                        std::uniform_real_distribution<float> white(static_cast<float>(-amp), static_cast<float>(amp));
                        std::vector<float> joined(len);
                        for (auto& v : joined) v = white(rng);
                        joined.insert(joined.end(), train[idx].audio.samples.begin(), train[idx].audio.samples.end());
                        mel = Tensor::from({frames, bins}, context_mel(model, joined));
                    } else {
                        mel = Tensor::from({frames, bins}, cached_mel[idx]);
                    }
                } else {
                    std::normal_distribution<float> hiss(0.0f, static_cast<float>(unit(rng) * 0.01));
                    std::vector<float> quiet(context);
                    for (auto& v : quiet) v = hiss(rng);
                    mel = Tensor::from({frames, bins}, context_mel(model, quiet));
                }
                std::vector<int> tokens = make_prefix(vocab, task, timestamps).tokens;
                const std::size_t prefix_len = tokens.size();
                const auto targets = task_targets(vocab, words, task, timestamps);
                tokens.insert(tokens.end(), targets.begin(), targets.end() - 1);

                const auto logits = model.logits(model.encode_mel(mel), tokens);
                const auto loss = cross_entropy_rows(slice_rows(logits, prefix_len - 1, tokens.size()), targets);
                const double value = loss.item();
                if (!std::isfinite(value)) {
                    throw TrainingFailure("train: non-finite loss at epoch " + std::to_string(epoch),
                                          result.report());
                }
                loss_sum += value;
                ++loss_count;
                const auto g = backward(loss);
                for (std::size_t i = 0; i < params.size(); ++i) {
                    if (const auto* gi = g.find(params[i])) {
                        for (std::size_t j = 0; j < gi->size(); ++j) grads[i][j] += (*gi)[j];
                    }
                }
            }

            const float inv = 1.0f / static_cast<float>(end - b);
            double norm2 = 0.0;
            for (auto& gi : grads) {
                for (auto& v : gi) {
                    v *= inv;
                    norm2 += static_cast<double>(v) * v;
                }
            }
            const double norm = std::sqrt(norm2);
            if (config.grad_clip > 0 && norm > config.grad_clip) {
                const auto f = static_cast<float>(config.grad_clip / norm);
                for (auto& gi : grads)
                    for (auto& v : gi) v *= f;
            }
            opt.set_learning_rate(learning_rate_at(config, opt.step_count(), total_steps));
            opt.step(grads);
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, loss_count));
        entry.dev_wer = dev.empty() ? 0.0 : to_breakdown(greedy_edit_counts(model, dev)).wer;
        entry.learning_rate = opt.config().learning_rate;
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
        if (best_values.empty() || entry.dev_wer < result.dev_wer) {
            result.dev_wer = entry.dev_wer;
            result.best_epoch = epoch;
            best_values.clear();
            for (const auto& p : params) best_values.push_back(p.values());
        }
    }

    auto out = result.model.parameters();
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::copy(best_values[i].begin(), best_values[i].end(), out[i].mutable_data().begin());
    }
    result.model.set_trainable(false);
    result.converged = result.dev_wer < config.dev_wer_threshold;
    if (!result.converged && config.require_convergence) {
        throw TrainingFailure("train: dev WER " + std::to_string(result.dev_wer) + "% did not fall below " +
                                  std::to_string(config.dev_wer_threshold) + "% within " +
                                  std::to_string(config.epochs) + " epochs",
                              result.report());
    }
    return result;
}

}  // namespace mutelab
