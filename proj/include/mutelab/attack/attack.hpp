#pragma once

// Universal prepend attack: learn one segment x~ with |x~|_inf <= eps that
// maximizes P(first token = eot | x~ ++ x, prefix) over a set of utterances
// and one or more frozen models.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/model.hpp"
#include "mutelab/attack/segment.hpp"
#include "mutelab/features/mel.hpp"
#include "mutelab/numerics/adamw.hpp"

namespace mutelab {

struct AttackConfig {
    std::size_t length = 10240;
    double epsilon = 0.02;
    double learning_rate = 1e-3;
    int batch_size = 16;
    int epochs = 0;  // 0 = by model size, see default_attack_epochs()
    std::uint64_t seed = 0;
    int restarts = 1;  // best-of-k over seeds seed, seed+1, ...
    InitMode init = InitMode::random;
    std::string warm_start;
    Task task = Task::transcribe;
    bool timestamps = false;
    std::string train_split = "dev";
    std::string domain = "clean";
    int train_limit = 0;    // 0 = every utterance of the split/domain
    int monitor_limit = 0;  // 0 = same as the training set

    void validate() const {
        expects(length > 0, "attack: segment length must be positive");
        expects(epsilon > 0.0, "attack: epsilon must be positive");
        expects(learning_rate > 0.0, "attack: learning rate must be positive");
        expects(epochs >= 0, "attack: epoch budget must be at least 1 (or 0 for the size default)");
        expects(batch_size >= 1, "attack: batch size must be at least 1");
        expects(restarts >= 1, "attack: need at least one restart");
        expects(train_limit >= 0 && monitor_limit >= 0, "attack: limits must be non-negative");
        expects(init == InitMode::random || !warm_start.empty(), "attack: warm start needs a segment path");
    }
};

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
    j = {{"length", c.length},
         {"epsilon", c.epsilon},
         {"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"seed", c.seed},
         {"restarts", c.restarts},
         {"init", c.init == InitMode::random ? "random" : "warm_start"},
         {"warm_start", c.warm_start},
         {"task", to_string(c.task)},
         {"timestamps", c.timestamps},
         {"train_split", c.train_split},
         {"domain", c.domain},
         {"train_limit", c.train_limit},
         {"monitor_limit", c.monitor_limit}};
}

inline InitMode parse_init_mode(std::string_view s) {
    if (s == "random") return InitMode::random;
    if (s == "warm_start") return InitMode::warm_start;
    throw SchemaError("unknown init mode '" + std::string(s) + "' (expected random or warm_start)");
}

inline void from_json(const nlohmann::json& j, AttackConfig& c) {
    const AttackConfig d;
    c.length = j.value("length", d.length);
    c.epsilon = j.value("epsilon", d.epsilon);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.seed = j.value("seed", d.seed);
    c.restarts = j.value("restarts", d.restarts);
    c.init = parse_init_mode(j.value("init", std::string("random")));
    c.warm_start = j.value("warm_start", d.warm_start);
    c.task = parse_task(j.value("task", to_string(d.task)));
    c.timestamps = j.value("timestamps", d.timestamps);
    c.train_split = j.value("train_split", d.train_split);
    c.domain = j.value("domain", d.domain);
    c.train_limit = j.value("train_limit", d.train_limit);
    c.monitor_limit = j.value("monitor_limit", d.monitor_limit);
}

// Larger models get a longer budget: 40 epochs when every target is the tiny
// size, 80 otherwise.
inline int default_attack_epochs(const std::vector<const AsrModel*>& models) {
    for (const auto* m : models) {
        if (m->config().name != "tiny") return 80;
    }
    return 40;
}

inline std::string config_hash(const AttackConfig& c) { return stable_hash(nlohmann::json(c).dump()); }

// log P(eot | segment ++ signal_j, prefix) for each of a fixed set of signals,
// differentiable in the segment. The unit of the attack objective, and the
// seam where tests substitute stubs for a model.
template <typename T>
class EotObjective {
public:
    virtual ~EotObjective() = default;
    virtual std::size_t size() const = 0;
    virtual BasicTensor<T> eot_log_prob(const BasicTensor<T>& segment, std::size_t j) const = 0;
};

template <typename T>
class ModelEotObjective final : public EotObjective<T> {
public:
    ModelEotObjective(const BasicAsrModel<T>& model, const std::vector<AudioSignal>& signals, DecoderPrefix prefix,
                      std::size_t segment_length, int sample_rate = kDefaultSampleRate)
        : model_(&model), prefix_(std::move(prefix)) {
        expects(sample_rate == model.config().mel.sample_rate, "attack: segment rate does not match model");
        for (const auto& s : signals) {
            expects(s.sample_rate == sample_rate, "attack: signal sample rate does not match segment");
            mels_.emplace_back(model.front_end(), segment_length, s.samples, model.config().context_samples());
        }
    }

    std::size_t size() const override { return mels_.size(); }

    BasicTensor<T> eot_log_prob(const BasicTensor<T>& segment, std::size_t j) const override {
        const auto enc = model_->encode_mel(mels_.at(j)(segment));
        const auto logits = model_->logits(enc, prefix_.tokens);
        const auto last = log_softmax_rows(slice_rows(logits, logits.dim(0) - 1, logits.dim(0)));
        return pick(last, static_cast<std::size_t>(model_->vocab().eot()));
    }

private:
    const BasicAsrModel<T>* model_;
    DecoderPrefix prefix_;
    std::vector<BasicPrefixedMel<T>> mels_;
};

// -sum_models mean_batch log P(eot | segment ++ x_j, prefix).
template <typename T>
BasicTensor<T> attack_loss(const std::vector<const EotObjective<T>*>& models, const BasicTensor<T>& segment,
                           std::span<const std::size_t> batch) {
    expects(!batch.empty(), "attack_loss: empty batch");
    expects(!models.empty(), "attack_loss: no models");
    std::vector<BasicTensor<T>> terms;
    for (const auto* m : models) {
        for (std::size_t j : batch) terms.push_back(m->eot_log_prob(segment, j));
    }
    return scale(sum_scalars(terms), T(-1) / static_cast<T>(batch.size()));
}

struct AttackEpochLog {
    int epoch = 0;
    double loss = 0.0;
    double monitor_mute_rate = 0.0;  // percent, first token = eot under the training prefix
    double max_abs = 0.0;
    double seconds = 0.0;  // wall clock, not serialized
};

inline void to_json(nlohmann::json& j, const AttackEpochLog& e) {
    j = {{"epoch", e.epoch},
         {"loss", e.loss},
         {"monitor_mute_rate", e.monitor_mute_rate},
         {"max_abs", e.max_abs}};
}

struct AttackRun {
    AdversarialSegment segment;
    std::vector<AttackEpochLog> log;
    std::vector<int> monotonicity_violations;  // epochs whose loss exceeded the running min by > 5%
    double monitor_mute_rate = 0.0;
    double final_loss = 0.0;
    std::int64_t steps = 0;

    nlohmann::json summary() const {
        return {{"seed", segment.seed},
                {"monitor_mute_rate", monitor_mute_rate},
                {"final_loss", final_loss},
                {"steps", steps},
                {"monotonicity_violations", monotonicity_violations},
                {"epochs", log}};
    }
};

struct UniversalResult {
    AttackConfig config;  // as run, epoch budget resolved
    AttackRun best;
    std::vector<nlohmann::json> runs;
};

// Called after every projected update with the live segment.
using StepObserver = std::function<void(std::int64_t step, std::span<const float> segment)>;
using EpochObserver = std::function<void(std::uint64_t seed, const AttackEpochLog&)>;

namespace detail {

// Argmax of the first-step distribution is eot (ties to the lowest id, as in
// greedy decoding).
template <typename T>
bool first_token_is_eot(const BasicAsrModel<T>& model, const BasicTensor<T>& mel, const DecoderPrefix& prefix) {
    const auto lp = model.next_log_probs(model.encode_mel(mel), prefix.tokens);
    std::size_t best = 0;
    for (std::size_t j = 1; j < lp.size(); ++j) {
        if (lp[j] > lp[best]) best = j;
    }
    return static_cast<int>(best) == model.vocab().eot();
}

}  // namespace detail

// Monitors the first-token mute rate of a segment on a fixed signal set.
class MuteMonitor {
public:
    MuteMonitor(std::vector<const AsrModel*> models, const std::vector<AudioSignal>& signals, DecoderPrefix prefix,
                std::size_t segment_length)
        : models_(std::move(models)), prefix_(std::move(prefix)) {
        for (const auto* m : models_) {
            auto& per_model = mels_.emplace_back();
            for (const auto& s : signals) {
                per_model.emplace_back(m->front_end(), segment_length, s.samples, m->config().context_samples());
            }
        }
    }

    // Minimum over models of the percentage muted.
    double operator()(std::span<const float> segment) const {
        if (mels_.empty() || mels_.front().empty()) return 0.0;
        NoGradGuard no_grad;
        const auto seg = Tensor::from({segment.size()}, std::vector<float>(segment.begin(), segment.end()));
        double worst = 100.0;
        for (std::size_t m = 0; m < models_.size(); ++m) {
            std::size_t hits = 0;
            for (const auto& pm : mels_[m]) hits += detail::first_token_is_eot(*models_[m], pm(seg), prefix_);
            worst = std::min(worst, 100.0 * static_cast<double>(hits) / static_cast<double>(mels_[m].size()));
        }
        return worst;
    }

private:
    std::vector<const AsrModel*> models_;
    DecoderPrefix prefix_;
    std::vector<std::vector<PrefixedMel>> mels_;
};

// One optimization run from one initialization. Frozen models only.
inline AttackRun run_attack(const std::vector<const EotObjective<float>*>& objectives, const MuteMonitor& monitor,
                            AdversarialSegment init, const AttackConfig& config, const StepObserver& on_step = {},
                            const EpochObserver& on_epoch = {}) {
    config.validate();
    expects(config.epochs >= 1, "attack: epoch budget must be at least 1");
    expects(!objectives.empty(), "attack: no models");
    const std::size_t n = objectives.front()->size();
    expects(n > 0, "attack: no training signals");
    for (const auto* o : objectives) expects(o->size() == n, "attack: objectives disagree on the signal set");
    expects(init.length() == config.length, "attack: initial segment has the wrong length");

    auto segment = Tensor::from({config.length}, init.samples, true);
    project_linf(segment.mutable_data(), config.epsilon);
    AdamW<float> opt({segment}, {config.learning_rate, 0.0});
    std::mt19937_64 rng(init.seed * 0x9E3779B97F4A7C15ULL + 17);

    AttackRun run;
    const auto started = std::chrono::steady_clock::now();
    auto record = [&](int epoch, double loss) {
        AttackEpochLog e;
        e.epoch = epoch;
        e.loss = loss;
        e.monitor_mute_rate = monitor(segment.data());
        e.max_abs = 0.0;
        for (float v : segment.data()) e.max_abs = std::max(e.max_abs, static_cast<double>(std::abs(v)));
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        run.log.push_back(e);
        if (on_epoch) on_epoch(init.seed, e);
    };

    // Epoch 0: the initialization itself.
    {
        NoGradGuard no_grad;
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        record(0, attack_loss(objectives, segment, all).item());
    }

    double running_min = run.log.front().loss;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t e = std::min(n, b + static_cast<std::size_t>(config.batch_size));
            const auto loss = attack_loss(objectives, segment, std::span<const std::size_t>(order).subspan(b, e - b));
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw std::runtime_error("attack: non-finite loss at epoch " + std::to_string(epoch) + ", seed " +
                                         std::to_string(init.seed));
            }
            loss_sum += value;
            ++batches;
            const auto g = backward(loss)[segment];
            opt.step({g});
            project_linf(segment.mutable_data(), config.epsilon);
            ++run.steps;
            if (on_step) on_step(run.steps, segment.data());
        }
        const double mean_loss = loss_sum / static_cast<double>(batches);
        record(epoch, mean_loss);
        if (mean_loss > running_min * 1.05 + 1e-12) run.monotonicity_violations.push_back(epoch);
        running_min = std::min(running_min, mean_loss);
    }

    run.segment = std::move(init);
    run.segment.samples = segment.values();
    run.segment.epsilon = config.epsilon;
    quantize_to_pcm16(run.segment.samples, config.epsilon);
    run.segment.config_hash = config_hash(config);
    run.monitor_mute_rate = monitor(run.segment.samples);
    run.final_loss = run.log.back().loss;
    return run;
}

struct AttackTarget {
    const AsrModel* model;
    std::string id;
};

// Best-of-k universal training. Models stay frozen throughout; the result
// carries the winning run (highest monitor mute rate, then lowest loss, then
// earliest seed) and summaries of every run.
inline UniversalResult train_universal(const std::vector<AttackTarget>& targets,
                                       const std::vector<AudioSignal>& train_signals,
                                       const std::vector<AudioSignal>& monitor_signals, AttackConfig config,
                                       const StepObserver& on_step = {}, const EpochObserver& on_epoch = {}) {
    config.validate();
    expects(!targets.empty(), "attack: no target models");
    expects(!train_signals.empty(), "attack: no training signals");
    for (const auto& t : targets) {
        expects(t.model->vocab() == targets.front().model->vocab(), "attack: target models disagree on vocabulary");
    }
    const auto prefix = make_prefix(targets.front().model->vocab(), config.task, config.timestamps);
    std::vector<std::unique_ptr<ModelEotObjective<float>>> owned;
    std::vector<const EotObjective<float>*> objectives;
    std::vector<const AsrModel*> models;
    std::vector<std::string> ids;
    for (const auto& t : targets) {
        owned.push_back(std::make_unique<ModelEotObjective<float>>(*t.model, train_signals, prefix, config.length));
        objectives.push_back(owned.back().get());
        models.push_back(t.model);
        ids.push_back(t.id);
    }
    if (config.epochs == 0) config.epochs = default_attack_epochs(models);
    const MuteMonitor monitor(models, monitor_signals, prefix, config.length);

    UniversalResult result;
    result.config = config;
    bool have_best = false;
    for (int k = 0; k < config.restarts; ++k) {
        const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(k);
        auto init = init_segment(config.init, seed, config.warm_start, config.epsilon, config.length);
        auto run = run_attack(objectives, monitor, std::move(init), config, on_step, on_epoch);
        run.segment.models = ids;
        result.runs.push_back(run.summary());
        const bool better = !have_best || run.monitor_mute_rate > result.best.monitor_mute_rate ||
                            (run.monitor_mute_rate == result.best.monitor_mute_rate &&
                             run.final_loss < result.best.final_loss);
        if (better) {
            result.best = std::move(run);
            have_best = true;
        }
    }
    return result;
}

// Segment for a single signal (J = 1): every step is a full-batch step and
// the epoch budget counts steps.
inline AttackRun train_per_sample(const AttackTarget& target, const AudioSignal& signal, AttackConfig config,
                                  const StepObserver& on_step = {}) {
    config.validate();
    if (config.epochs == 0) config.epochs = default_attack_epochs({target.model});
    const auto prefix = make_prefix(target.model->vocab(), config.task, config.timestamps);
    const ModelEotObjective<float> objective(*target.model, {signal}, prefix, config.length);
    const MuteMonitor monitor({target.model}, {signal}, prefix, config.length);
    auto init = init_segment(config.init, config.seed, config.warm_start, config.epsilon, config.length);
    auto run = run_attack({&objective}, monitor, std::move(init), config, on_step);
    run.segment.models = {target.id};
    return run;
}

}  // namespace mutelab
