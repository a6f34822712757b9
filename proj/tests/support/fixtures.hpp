#pragma once

#include <cstdint>
#include <random>

#include "mutelab/asr/model.hpp"

namespace mutelab::testing {

// A model small enough for finite differences: 0.2 s context, 6 words.
inline ModelConfig small_config() {
    ModelConfig c;
    c.name = "unit";
    c.width = 16;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.context_seconds = 0.2;
    c.max_positions = 12;
    c.vocab_words = 6;
    return c;
}

inline AudioSignal noise(std::size_t n, std::uint64_t seed, double amp = 0.2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    AudioSignal s;
    s.samples.resize(n);
    for (auto& v : s.samples) v = static_cast<float>(u(rng));
    return s;
}

}  // namespace mutelab::testing
