#pragma once

// Log-mel front end realized as framed matmuls, so it is differentiable with
// respect to raw samples through the ordinary tensor ops:
//
//   frames [F,400] x windowed DFT basis [400, 2*201] -> squared -> x stacked
//   filterbank [2*201, 64] -> log10(max(., 1e-10))
//
// Stacking the filterbank twice sums re^2 and im^2 inside the second matmul.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "mutelab/audio/wav.hpp"
#include "mutelab/numerics/ops.hpp"

namespace mutelab {

struct MelConfig {
    int sample_rate = kDefaultSampleRate;
    std::size_t window = 400;
    std::size_t hop = 160;
    std::size_t n_mels = 64;
    double fmin = 0.0;
    double fmax = 8000.0;
    double power_floor = 1e-10;

    std::size_t n_fft_bins() const { return window / 2 + 1; }

    std::size_t frame_count(std::size_t samples) const {
        return samples < window ? 0 : (samples - window) / hop + 1;
    }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Center frequency of each mel band (HTK mel scale, equal spacing in mel).
inline std::vector<double> mel_band_centers(const MelConfig& cfg) {
    const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
    std::vector<double> centers(cfg.n_mels);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        centers[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(cfg.n_mels + 1));
    }
    return centers;
}

// Triangular filters with unit peak, [n_fft_bins, n_mels].
inline std::vector<double> mel_filterbank(const MelConfig& cfg) {
    const std::size_t bins = cfg.n_fft_bins();
    const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(cfg.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
    }
    std::vector<double> fb(bins * cfg.n_mels, 0.0);
    for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.window);
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
            double w = 0.0;
            if (f > left && f <= center) w = (f - left) / (center - left);
            else if (f > center && f < right) w = (right - f) / (right - center);
            fb[k * cfg.n_mels + m] = w;
        }
    }
    return fb;
}

struct MelSpectrogram {
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::size_t hop = 0;
    std::size_t window = 0;
    std::vector<float> values;  // row-major, row = frame

    float at(std::size_t frame, std::size_t bin) const { return values[frame * bins + bin]; }
};

template <typename T>
class BasicMelFrontEnd {
public:
    explicit BasicMelFrontEnd(MelConfig cfg = {}) : cfg_(cfg) {
        const std::size_t n = cfg_.window, bins = cfg_.n_fft_bins();
        std::vector<T> basis(n * 2 * bins);
        for (std::size_t t = 0; t < n; ++t) {
            // Periodic Hann window.
            const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(n));
            for (std::size_t k = 0; k < bins; ++k) {
                const double angle = 2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n);
                basis[t * 2 * bins + k] = static_cast<T>(w * std::cos(angle));
                basis[t * 2 * bins + bins + k] = static_cast<T>(-w * std::sin(angle));
            }
        }
        basis_ = BasicTensor<T>::from({n, 2 * bins}, std::move(basis));
        const auto fb = mel_filterbank(cfg_);
        std::vector<T> stacked(2 * bins * cfg_.n_mels);
        for (std::size_t r = 0; r < 2 * bins; ++r) {
            for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
                stacked[r * cfg_.n_mels + m] = static_cast<T>(fb[(r % bins) * cfg_.n_mels + m]);
            }
        }
        filterbank_ = BasicTensor<T>::from({2 * bins, cfg_.n_mels}, std::move(stacked));
    }

    const MelConfig& config() const { return cfg_; }

    // [N] samples -> [F, n_mels] log-mel; differentiable w.r.t. samples.
    BasicTensor<T> operator()(const BasicTensor<T>& samples) const {
        expects(samples.rank() == 1, "log_mel: expected a rank-1 sample tensor");
        expects(samples.numel() >= cfg_.window, "log_mel: signal of " + std::to_string(samples.numel()) +
                                                    " samples is shorter than one window (" +
                                                    std::to_string(cfg_.window) + ")");
        auto framed = frames(samples, cfg_.window, cfg_.hop);
        auto spectrum = matmul(framed, basis_);
        auto mel = matmul(square(spectrum), filterbank_);
        return log10_floor(mel, static_cast<T>(cfg_.power_floor));
    }

private:
    MelConfig cfg_;
    BasicTensor<T> basis_;
    BasicTensor<T> filterbank_;
};

using MelFrontEnd = BasicMelFrontEnd<float>;

// Shared default front end (constant after construction).
inline const MelFrontEnd& default_front_end() {
    static const MelFrontEnd fe;
    return fe;
}

inline MelSpectrogram log_mel(const AudioSignal& signal, const MelFrontEnd& fe = default_front_end()) {
    expects(signal.sample_rate == fe.config().sample_rate, "log_mel: sample rate does not match front end");
    NoGradGuard no_grad;
    const auto t = fe(Tensor::from({signal.samples.size()}, signal.samples));
    MelSpectrogram out;
    out.frames = t.dim(0);
    out.bins = t.dim(1);
    out.hop = fe.config().hop;
    out.window = fe.config().window;
    out.values = t.values();
    return out;
}

// Zero-pads or truncates to exactly `length` samples.
inline std::vector<float> fit_to_length(std::span<const float> samples, std::size_t length) {
    std::vector<float> out(length, 0.0f);
    std::copy_n(samples.begin(), std::min(length, samples.size()), out.begin());
    return out;
}

// log-mel of fit_to_length(segment ⊕ speech, context) where only the segment
// is variable. Frames lying entirely inside the speech part are computed once
// at construction; each call rebuilds only the frames that overlap the
// segment, so the tape stays small during attack training.
template <typename T>
class BasicPrefixedMel {
public:
    BasicPrefixedMel(const BasicMelFrontEnd<T>& fe, std::size_t segment_length, std::span<const float> speech,
                     std::size_t context)
        : fe_(&fe), segment_length_(segment_length), context_(context) {
        const auto& cfg = fe.config();
        expects(context >= cfg.window, "prefixed mel: context shorter than one window");
        const std::size_t total_frames = cfg.frame_count(context);
        variable_frames_ = std::min(total_frames, (segment_length + cfg.hop - 1) / cfg.hop);
        const std::size_t speech_room = context > segment_length ? context - segment_length : 0;
        const auto speech_fit = fit_to_length(speech, speech_room);

        if (variable_frames_ > 0) {
            const std::size_t span_len = (variable_frames_ - 1) * cfg.hop + cfg.window;
            const std::size_t head = span_len > segment_length ? span_len - segment_length : 0;
            std::vector<T> head_samples(head, T(0));
            for (std::size_t i = 0; i < head && i < speech_fit.size(); ++i) head_samples[i] = speech_fit[i];
            head_ = BasicTensor<T>::from({head}, std::move(head_samples));
        }
        if (variable_frames_ < total_frames) {
            std::vector<T> full(context, T(0));
            for (std::size_t i = 0; i < speech_fit.size(); ++i) full[segment_length + i] = speech_fit[i];
            NoGradGuard no_grad;
            auto all = (*fe_)(BasicTensor<T>::from({context}, std::move(full)));
            constant_ = slice_rows(all, variable_frames_, total_frames);
        }
    }

    std::size_t variable_frames() const { return variable_frames_; }

    BasicTensor<T> operator()(const BasicTensor<T>& segment) const {
        expects(segment.rank() == 1 && segment.numel() == segment_length_, "prefixed mel: segment length mismatch");
        if (variable_frames_ == 0) return constant_;
        BasicTensor<T> span = segment;
        const std::size_t span_len = (variable_frames_ - 1) * fe_->config().hop + fe_->config().window;
        if (segment_length_ > span_len) {
            span = slice_rows(segment, 0, span_len);
        } else if (head_.numel() > 0) {
            span = concat_rows<T>({segment, head_});
        }
        auto variable = (*fe_)(span);
        if (!constant_.defined()) return variable;
        return concat_rows<T>({variable, constant_});
    }

private:
    const BasicMelFrontEnd<T>* fe_;
    std::size_t segment_length_;
    std::size_t context_;
    std::size_t variable_frames_ = 0;
    BasicTensor<T> head_;
    BasicTensor<T> constant_;
};

using PrefixedMel = BasicPrefixedMel<float>;

}  // namespace mutelab
