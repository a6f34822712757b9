#pragma once

// Desk-scale Whisper-like encoder-decoder.
//
// Encoder: log-mel -> fixed affine rescale -> conv(k3) GELU -> conv(k3, stride)
// GELU -> + sinusoidal positions -> pre-LN transformer blocks -> LN.
// Decoder: token embedding + learned positions -> pre-LN blocks with causal
// self-attention and cross-attention -> LN -> logits = h W^T, where W is the
// token embedding matrix (tied output projection).

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/vocab.hpp"
#include "mutelab/features/mel.hpp"
#include "mutelab/numerics/ops.hpp"

namespace mutelab {

struct ModelConfig {
    std::string name = "base";
    int width = 64;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int heads = 4;
    int mlp_ratio = 4;
    double context_seconds = 3.0;
    int conv_stride = 2;
    int max_positions = 32;
    int vocab_words = 32;
    MelConfig mel;

    static ModelConfig tiny() {
        ModelConfig c;
        c.name = "tiny";
        c.width = 48;
        c.encoder_layers = 1;
        c.decoder_layers = 1;
        return c;
    }
    static ModelConfig base() { return {}; }

    std::size_t context_samples() const {
        return static_cast<std::size_t>(std::lround(context_seconds * mel.sample_rate));
    }
    std::size_t mel_frames() const { return mel.frame_count(context_samples()); }
    std::size_t encoder_frames() const { return (mel_frames() - 1) / static_cast<std::size_t>(conv_stride) + 1; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"name", c.name},
         {"width", c.width},
         {"encoder_layers", c.encoder_layers},
         {"decoder_layers", c.decoder_layers},
         {"heads", c.heads},
         {"mlp_ratio", c.mlp_ratio},
         {"context_seconds", c.context_seconds},
         {"conv_stride", c.conv_stride},
         {"max_positions", c.max_positions},
         {"vocab_words", c.vocab_words},
         {"sample_rate", c.mel.sample_rate},
         {"n_mels", c.mel.n_mels},
         {"window", c.mel.window},
         {"hop", c.mel.hop}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    const ModelConfig d;
    c.name = j.value("name", d.name);
    c.width = j.value("width", d.width);
    c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
    c.heads = j.value("heads", d.heads);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    c.context_seconds = j.value("context_seconds", d.context_seconds);
    c.conv_stride = j.value("conv_stride", d.conv_stride);
    c.max_positions = j.value("max_positions", d.max_positions);
    c.vocab_words = j.value("vocab_words", d.vocab_words);
    c.mel.sample_rate = j.value("sample_rate", d.mel.sample_rate);
    c.mel.n_mels = j.value("n_mels", d.mel.n_mels);
    c.mel.window = j.value("window", d.mel.window);
    c.mel.hop = j.value("hop", d.mel.hop);
}

template <typename T>
struct EncoderState {
    BasicTensor<T> output;                        // [frames, width]
    std::vector<BasicTensor<T>> cross_keys;       // per decoder layer
    std::vector<BasicTensor<T>> cross_values;     // per decoder layer
};

template <typename T>
class BasicAsrModel {
public:
    struct Linear {
        BasicTensor<T> w;  // [in, out]
        BasicTensor<T> b;  // [out], undefined when bias-free
    };
    struct Norm {
        BasicTensor<T> gain, bias;
    };
    struct Attention {
        Linear q, k, v, o;
    };
    struct Mlp {
        Linear up, down;
    };
    struct EncoderBlock {
        Norm ln_attn;
        Attention attn;
        Norm ln_mlp;
        Mlp mlp;
    };
    struct DecoderBlock {
        Norm ln_self;
        Attention self_attn;
        Norm ln_cross;
        Attention cross_attn;
        Norm ln_mlp;
        Mlp mlp;
    };
    struct Weights {
        Linear conv1, conv2;
        std::vector<EncoderBlock> encoder;
        Norm encoder_ln;
        BasicTensor<T> token_embedding;     // [V, width], also the output projection W
        BasicTensor<T> position_embedding;  // [max_positions, width]
        std::vector<DecoderBlock> decoder;
        Norm decoder_ln;
    };

    using Visitor = std::function<void(const std::string&, BasicTensor<T>&, Shape)>;

    explicit BasicAsrModel(ModelConfig config, std::uint64_t seed = 0)
        : config_(std::move(config)), vocab_(config_.vocab_words),
          front_end_(std::make_shared<BasicMelFrontEnd<T>>(config_.mel)) {
        expects(config_.width % config_.heads == 0, "model width must be divisible by head count");
        expects(config_.conv_stride >= 1, "conv stride must be positive");
        weights_.encoder.resize(static_cast<std::size_t>(config_.encoder_layers));
        weights_.decoder.resize(static_cast<std::size_t>(config_.decoder_layers));
        std::mt19937_64 rng(seed);
        visit([&](const std::string& name, BasicTensor<T>& t, Shape shape) {
            const auto n = shape_numel(shape);
            std::vector<T> data(n, T(0));
            const bool is_gain = name.ends_with(".gain");
            const bool is_bias = name.ends_with(".b") || name.ends_with(".bias");
            if (is_gain) {
                std::fill(data.begin(), data.end(), T(1));
            } else if (name == "decoder.token_embedding") {
                std::normal_distribution<double> nd(0.0, 0.1);
                for (auto& v : data) v = static_cast<T>(nd(rng));
            } else if (name == "decoder.position_embedding") {
                std::normal_distribution<double> nd(0.0, 0.02);
                for (auto& v : data) v = static_cast<T>(nd(rng));
            } else if (!is_bias) {
                const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
                std::uniform_real_distribution<double> ud(-limit, limit);
                for (auto& v : data) v = static_cast<T>(ud(rng));
            }
            t = BasicTensor<T>::from(std::move(shape), std::move(data), true);
        });
        build_positions();
    }

    const ModelConfig& config() const { return config_; }
    const Vocab& vocab() const { return vocab_; }
    const BasicMelFrontEnd<T>& front_end() const { return *front_end_; }
    const Weights& weights() const { return weights_; }

    // Output projection W (rows w_j, one per token).
    const BasicTensor<T>& output_projection() const { return weights_.token_embedding; }

    // Enumerates every parameter in a fixed order with its expected shape.
    void visit(const Visitor& fn) {
        const auto d = static_cast<std::size_t>(config_.width);
        const auto mlp = d * static_cast<std::size_t>(config_.mlp_ratio);
        const auto mels = config_.mel.n_mels;
        const auto vocab = vocab_.size();
        auto linear = [&](const std::string& name, Linear& l, std::size_t in, std::size_t out, bool bias = true) {
            fn(name + ".w", l.w, {in, out});
            if (bias) fn(name + ".b", l.b, {out});
        };
        auto norm = [&](const std::string& name, Norm& n) {
            fn(name + ".gain", n.gain, {d});
            fn(name + ".bias", n.bias, {d});
        };
        auto attention = [&](const std::string& name, Attention& a) {
            linear(name + ".q", a.q, d, d);
            linear(name + ".k", a.k, d, d, false);
            linear(name + ".v", a.v, d, d);
            linear(name + ".o", a.o, d, d);
        };
        auto feed_forward = [&](const std::string& name, Mlp& m) {
            linear(name + ".up", m.up, d, mlp);
            linear(name + ".down", m.down, mlp, d);
        };
        linear("encoder.conv1", weights_.conv1, 3 * mels, d);
        linear("encoder.conv2", weights_.conv2, 3 * d, d);
        for (std::size_t i = 0; i < weights_.encoder.size(); ++i) {
            const auto p = "encoder.block" + std::to_string(i);
            auto& b = weights_.encoder[i];
            norm(p + ".ln_attn", b.ln_attn);
            attention(p + ".attn", b.attn);
            norm(p + ".ln_mlp", b.ln_mlp);
            feed_forward(p + ".mlp", b.mlp);
        }
        norm("encoder.ln_post", weights_.encoder_ln);
        fn("decoder.token_embedding", weights_.token_embedding, {vocab, d});
        fn("decoder.position_embedding", weights_.position_embedding,
           {static_cast<std::size_t>(config_.max_positions), d});
        for (std::size_t i = 0; i < weights_.decoder.size(); ++i) {
            const auto p = "decoder.block" + std::to_string(i);
            auto& b = weights_.decoder[i];
            norm(p + ".ln_self", b.ln_self);
            attention(p + ".self_attn", b.self_attn);
            norm(p + ".ln_cross", b.ln_cross);
            attention(p + ".cross_attn", b.cross_attn);
            norm(p + ".ln_mlp", b.ln_mlp);
            feed_forward(p + ".mlp", b.mlp);
        }
        norm("decoder.ln_post", weights_.decoder_ln);
    }

    std::vector<std::pair<std::string, BasicTensor<T>>> named_parameters() {
        std::vector<std::pair<std::string, BasicTensor<T>>> out;
        visit([&](const std::string& name, BasicTensor<T>& t, Shape) { out.emplace_back(name, t); });
        return out;
    }

    std::vector<std::pair<std::string, BasicTensor<T>>> named_parameters() const {
        return const_cast<BasicAsrModel*>(this)->named_parameters();
    }

    std::vector<BasicTensor<T>> parameters() const {
        std::vector<BasicTensor<T>> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : parameters()) n += t.numel();
        return n;
    }

    // Frozen models record no tape for their weights.
    void set_trainable(bool on) {
        for (auto& t : parameters()) t.set_requires_grad(on);
    }

    template <typename U>
    BasicAsrModel<U> cast() const {
        BasicAsrModel<U> out(config_, 0);
        const auto src = named_parameters();
        auto dst = out.named_parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            auto to = dst[i].second.mutable_data();
            const auto from = src[i].second.data();
            for (std::size_t j = 0; j < from.size(); ++j) to[j] = static_cast<U>(from[j]);
        }
        out.set_trainable(src.empty() ? false : src.front().second.requires_grad());
        return out;
    }

    // ---- encoder ---------------------------------------------------------

    // mel: [mel_frames, n_mels] for exactly one context window.
    EncoderState<T> encode_mel(const BasicTensor<T>& mel) const {
        expects(mel.rank() == 2 && mel.dim(0) == config_.mel_frames() && mel.dim(1) == config_.mel.n_mels,
                "encode: expected log-mel of shape [" + std::to_string(config_.mel_frames()) + "," +
                    std::to_string(config_.mel.n_mels) + "], got " + shape_str(mel.shape()));
        const auto& w = weights_;
        auto x = scale(add_scalar(mel, T(2)), T(1) / T(3));
        x = gelu(affine(frames(x, 3, 1, 1), w.conv1));
        x = gelu(affine(frames(x, 3, static_cast<std::size_t>(config_.conv_stride), 1), w.conv2));
        x = add(x, encoder_positions_);
        for (const auto& block : w.encoder) {
            x = add(x, attend(norm(x, block.ln_attn), block.attn, nullptr, nullptr, false));
            x = add(x, feed_forward(norm(x, block.ln_mlp), block.mlp));
        }
        EncoderState<T> state;
        state.output = norm(x, w.encoder_ln);
        for (const auto& block : w.decoder) {
            state.cross_keys.push_back(affine(state.output, block.cross_attn.k));
            state.cross_values.push_back(affine(state.output, block.cross_attn.v));
        }
        return state;
    }

    // samples: exactly context_samples() values (see fit_context()).
    EncoderState<T> encode_samples(const BasicTensor<T>& samples) const {
        expects(samples.rank() == 1 && samples.numel() == config_.context_samples(),
                "encode: expected " + std::to_string(config_.context_samples()) + " samples");
        return encode_mel((*front_end_)(samples));
    }

    // Zero-pads or truncates raw audio to the model's fixed context.
    std::vector<float> fit_context(std::span<const float> samples) const {
        return fit_to_length(samples, config_.context_samples());
    }

    EncoderState<T> encode(const AudioSignal& audio) const {
        expects(audio.sample_rate == config_.mel.sample_rate, "encode: sample rate mismatch");
        const auto fitted = fit_context(audio.samples);
        return encode_samples(BasicTensor<T>::from({fitted.size()}, std::vector<T>(fitted.begin(), fitted.end())));
    }

    // ---- decoder ---------------------------------------------------------

    // Final decoder hidden states q, one row per input token: [L, width].
    BasicTensor<T> decoder_hidden(const EncoderState<T>& enc, std::span<const int> tokens) const {
        expects(!tokens.empty(), "decoder: empty token sequence");
        expects(tokens.size() <= static_cast<std::size_t>(config_.max_positions),
                "decoder: sequence longer than max_positions");
        for (int t : tokens) {
            expects(vocab_.contains(t), "decoder: token id " + std::to_string(t) + " out of vocabulary");
        }
        const auto& w = weights_;
        auto x = add(embedding(w.token_embedding, tokens), slice_rows(w.position_embedding, 0, tokens.size()));
        for (std::size_t i = 0; i < w.decoder.size(); ++i) {
            const auto& block = w.decoder[i];
            x = add(x, attend(norm(x, block.ln_self), block.self_attn, nullptr, nullptr, true));
            x = add(x, attend(norm(x, block.ln_cross), block.cross_attn, &enc.cross_keys[i], &enc.cross_values[i],
                              false));
            x = add(x, feed_forward(norm(x, block.ln_mlp), block.mlp));
        }
        return norm(x, w.decoder_ln);
    }

    // Logits y = W q for every position: [L, |V|].
    BasicTensor<T> logits(const EncoderState<T>& enc, std::span<const int> tokens) const {
        return matmul_nt(decoder_hidden(enc, tokens), weights_.token_embedding);
    }

    // Log-distribution over the next token after `tokens` (last row only).
    std::vector<double> next_log_probs(const EncoderState<T>& enc, std::span<const int> tokens) const {
        NoGradGuard no_grad;
        const auto all = logits(enc, tokens);
        const std::size_t v = all.dim(1);
        const auto row = all.data().subspan((all.dim(0) - 1) * v, v);
        double mx = -1e300;
        for (T x : row) mx = std::max(mx, static_cast<double>(x));
        double z = 0.0;
        for (T x : row) z += std::exp(static_cast<double>(x) - mx);
        const double lse = mx + std::log(z);
        std::vector<double> out(v);
        for (std::size_t j = 0; j < v; ++j) out[j] = static_cast<double>(row[j]) - lse;
        return out;
    }

private:
    template <typename>
    friend class BasicAsrModel;

    BasicTensor<T> affine(const BasicTensor<T>& x, const Linear& l) const {
        auto y = matmul(x, l.w);
        return l.b.defined() ? add_row(y, l.b) : y;
    }

    BasicTensor<T> norm(const BasicTensor<T>& x, const Norm& n) const { return layer_norm_rows(x, n.gain, n.bias); }

    BasicTensor<T> feed_forward(const BasicTensor<T>& x, const Mlp& m) const {
        return affine(gelu(affine(x, m.up)), m.down);
    }

    // Multi-head attention. Keys/values come from `x` (self-attention) or
    // from the precomputed encoder projections.
    BasicTensor<T> attend(const BasicTensor<T>& x, const Attention& a, const BasicTensor<T>* keys,
                          const BasicTensor<T>* values, bool causal) const {
        const auto q = affine(x, a.q);
        const auto k = keys ? *keys : affine(x, a.k);
        const auto v = values ? *values : affine(x, a.v);
        const std::size_t heads = static_cast<std::size_t>(config_.heads);
        const std::size_t dh = static_cast<std::size_t>(config_.width) / heads;
        const T factor = T(1) / std::sqrt(static_cast<T>(dh));
        std::vector<BasicTensor<T>> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            auto scores = scale(matmul_nt(slice_cols(q, h * dh, (h + 1) * dh), slice_cols(k, h * dh, (h + 1) * dh)),
                                factor);
            if (causal) scores = add(scores, causal_mask(scores.dim(0)));
            outs.push_back(matmul(softmax_rows(scores), slice_cols(v, h * dh, (h + 1) * dh)));
        }
        return affine(heads == 1 ? outs.front() : concat_cols(outs), a.o);
    }

    static BasicTensor<T> causal_mask(std::size_t n) {
        std::vector<T> m(n * n, T(0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = T(-1e9);
        return BasicTensor<T>::from({n, n}, std::move(m));
    }

    void build_positions() {
        const std::size_t frames_out = config_.encoder_frames();
        const std::size_t d = static_cast<std::size_t>(config_.width);
        std::vector<T> pe(frames_out * d);
        const std::size_t half = d / 2;
        for (std::size_t t = 0; t < frames_out; ++t) {
            for (std::size_t i = 0; i < half; ++i) {
                const double rate = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half - 1));
                pe[t * d + i] = static_cast<T>(std::sin(static_cast<double>(t) * rate));
                pe[t * d + half + i] = static_cast<T>(std::cos(static_cast<double>(t) * rate));
            }
        }
        encoder_positions_ = BasicTensor<T>::from({frames_out, d}, std::move(pe));
    }

    ModelConfig config_;
    Vocab vocab_;
    std::shared_ptr<const BasicMelFrontEnd<T>> front_end_;
    Weights weights_;
    BasicTensor<T> encoder_positions_;
};

using AsrModel = BasicAsrModel<float>;

// P(y | x, tokens) as a differentiable probability row over the vocabulary.
template <typename T>
BasicTensor<T> next_token_dist(const BasicAsrModel<T>& model, const BasicTensor<T>& samples,
                               std::span<const int> tokens) {
    const auto enc = model.encode_samples(samples);
    const auto all = model.logits(enc, tokens);
    return softmax_rows(slice_rows(all, all.dim(0) - 1, all.dim(0)));
}

inline std::vector<double> next_token_dist(const AsrModel& model, const AudioSignal& audio,
                                           std::span<const int> tokens) {
    NoGradGuard no_grad;
    const auto lp = model.next_log_probs(model.encode(audio), tokens);
    std::vector<double> out(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) out[i] = std::exp(lp[i]);
    return out;
}

}  // namespace mutelab
