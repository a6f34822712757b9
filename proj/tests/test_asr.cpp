#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <random>

#include "mutelab/asr/checkpoint.hpp"
#include "mutelab/asr/decode.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace mutelab;
using mutelab::testing::noise;
using mutelab::testing::small_config;
namespace fs = std::filesystem;

namespace {

// Deterministic pseudo-random distribution per history.
class HashedStub final : public StepDistribution {
public:
    HashedStub(std::size_t vocab, std::uint64_t seed, double sharpness) : vocab_(vocab), seed_(seed), sharp_(sharpness) {}

    std::vector<double> log_probs(std::span<const int> history) const override {
        std::uint64_t h = seed_;
        for (int t : history) h = h * 1000003u + static_cast<std::uint64_t>(t + 1);
        std::mt19937_64 rng(h);
        std::normal_distribution<double> nd(0.0, sharp_);
        std::vector<double> logits(vocab_);
        for (auto& v : logits) v = nd(rng);
        double mx = *std::max_element(logits.begin(), logits.end()), z = 0;
        for (double v : logits) z += std::exp(v - mx);
        for (auto& v : logits) v = v - mx - std::log(z);
        return logits;
    }

private:
    std::size_t vocab_;
    std::uint64_t seed_;
    double sharp_;
};

// Explicit table: next distribution keyed by the generated suffix.
class TableStub final : public StepDistribution {
public:
    TableStub(std::size_t prefix_len, std::map<std::vector<int>, std::vector<double>> probs, std::size_t vocab)
        : prefix_len_(prefix_len), probs_(std::move(probs)), vocab_(vocab) {}

    std::vector<double> log_probs(std::span<const int> history) const override {
        std::vector<int> generated(history.begin() + static_cast<std::ptrdiff_t>(prefix_len_), history.end());
        auto it = probs_.find(generated);
        std::vector<double> p = it != probs_.end() ? it->second : std::vector<double>(vocab_, 1.0 / vocab_);
        for (auto& v : p) v = std::log(v);
        return p;
    }

private:
    std::size_t prefix_len_;
    std::map<std::vector<int>, std::vector<double>> probs_;
    std::size_t vocab_;
};

struct Best {
    std::vector<int> tokens;
    double score = -1e300;
};

// Oracle: enumerate every eot-terminated sequence of at most max_len tokens
// and every eot-free sequence of exactly max_len tokens.
Best exhaustive(const StepDistribution& dist, const Vocab& vocab, const DecoderPrefix& prefix, std::size_t max_len) {
    Best best;
    std::function<void(std::vector<int>&, double)> rec = [&](std::vector<int>& gen, double score) {
        std::vector<int> hist = prefix.tokens;
        hist.insert(hist.end(), gen.begin(), gen.end());
        const auto lp = dist.log_probs(hist);
        for (std::size_t j = 0; j < lp.size(); ++j) {
            const double s = score + lp[j];
            gen.push_back(static_cast<int>(j));
            if (static_cast<int>(j) == vocab.eot() || gen.size() == max_len) {
                if (s > best.score) best = {gen, s};
            } else if (gen.size() < max_len) {
                rec(gen, s);
            }
            gen.pop_back();
        }
    };
    std::vector<int> gen;
    rec(gen, 0.0);
    return best;
}

}  // namespace

TEST(Vocab, DenseIdsAndSpecialTokens) {
    const Vocab v(32);
    EXPECT_EQ(v.size(), 39u);
    EXPECT_EQ(v.eot(), 32);
    EXPECT_EQ(v.token(v.eot()), "<|endoftext|>");
    std::set<std::string> names(v.tokens().begin(), v.tokens().end());
    EXPECT_EQ(names.size(), v.size());
    EXPECT_EQ(make_prefix(v, Task::transcribe, false).tokens.front(), v.sot());
    EXPECT_EQ(make_prefix(v, Task::transcribe, true, PrefixStyle::english_only).tokens, std::vector<int>{v.sot()});
    const auto p = make_prefix(v, Task::translate, false).tokens;
    EXPECT_EQ(p, (std::vector<int>{v.sot(), v.language(), v.translate(), v.notimestamps()}));
    for (int w : task_targets(v, {0, 5, 7}, Task::translate, true)) {
        EXPECT_TRUE(v.is_word(w) || w == v.eot() || w == v.timestamp0());
    }
}

TEST(Model, DistributionSumsToOne) {
    const AsrModel model(small_config(), 3);
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, false);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto p = next_token_dist(model, noise(2500, s), prefix.tokens);
        double total = 0;
        for (double v : p) total += v;
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(Model, ZeroOutputHeadGivesUniform) {
    AsrModel model(small_config(), 3);
    auto w = model.named_parameters();
    for (auto& [name, t] : w) {
        if (name == "decoder.token_embedding") std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0f);
    }
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, true);
    const auto p = next_token_dist(model, noise(3200, 1), prefix.tokens);
    for (double v : p) EXPECT_NEAR(v, 1.0 / model.vocab().size(), 1e-7);
}

TEST(Model, OutOfVocabTokenIsContractViolation) {
    const AsrModel model(small_config(), 3);
    const std::vector<int> bad{model.vocab().sot(), static_cast<int>(model.vocab().size())};
    EXPECT_THROW(next_token_dist(model, noise(3200, 1), bad), ContractViolation);
    EXPECT_THROW(next_token_dist(model, noise(3200, 1), std::vector<int>{-1}), ContractViolation);
}

TEST(Model, LogitsAreOutputProjectionTimesHidden) {
    const AsrModel model(small_config(), 4);
    NoGradGuard ng;
    const auto enc = model.encode(noise(3200, 2));
    const std::vector<int> tokens{model.vocab().sot(), model.vocab().language(), 1, 2};
    const auto q = model.decoder_hidden(enc, tokens);
    const auto y = model.logits(enc, tokens);
    const auto& w = model.output_projection();
    ASSERT_EQ(w.dim(0), model.vocab().size());
    for (std::size_t r = 0; r < tokens.size(); ++r) {
        std::size_t arg_direct = 0, arg_model = 0;
        std::vector<double> direct(w.dim(0));
        for (std::size_t j = 0; j < w.dim(0); ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < w.dim(1); ++k) acc += double(w.data()[j * w.dim(1) + k]) * q.data()[r * q.dim(1) + k];
            direct[j] = acc;
            EXPECT_NEAR(y.data()[r * w.dim(0) + j], acc, 1e-5);
            if (acc > direct[arg_direct]) arg_direct = j;
            if (y.data()[r * w.dim(0) + j] > y.data()[r * w.dim(0) + arg_model]) arg_model = j;
        }
        EXPECT_EQ(arg_direct, arg_model);
    }
}

TEST(Model, GradientWithRespectToSamples) {
    const auto model = AsrModel(small_config(), 5).cast<double>();
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, false);
    std::mt19937_64 rng(3);
    auto x = mutelab::testing::random_tensor(rng, {model.config().context_samples()}, -0.1, 0.1);
    auto fn = [&](const std::vector<mutelab::testing::DTensor>& in) {
        const auto p = next_token_dist(model, in[0], prefix.tokens);
        return log(pick(p, static_cast<std::size_t>(model.vocab().eot())));
    };
    const auto res = mutelab::testing::grad_check(fn, {x}, 1e-5, 1e-5, 40, 79);
    EXPECT_LT(res.worst_relative, 1e-4) << res.worst_at;
    const auto g = backward(fn({x}))[x];
    double norm = 0;
    for (double v : g) {
        ASSERT_TRUE(std::isfinite(v));
        norm += v * v;
    }
    EXPECT_GT(norm, 0.0);
}

TEST(Model, GradientWithRespectToParameters) {
    auto model = AsrModel(small_config(), 6).cast<double>();
    model.set_trainable(true);
    const auto prefix = make_prefix(model.vocab(), Task::translate, true);
    const auto audio = noise(3200, 7).samples;
    auto samples = BasicTensor<double>::from({audio.size()}, std::vector<double>(audio.begin(), audio.end()));
    std::vector<int> tokens = prefix.tokens;
    tokens.push_back(model.vocab().timestamp0());
    tokens.push_back(2);
    const std::vector<int> targets{model.vocab().timestamp0(), 2, model.vocab().eot()};
    auto params = model.parameters();
    auto fn = [&](const std::vector<mutelab::testing::DTensor>&) {
        const auto logits = model.logits(model.encode_samples(samples), tokens);
        return cross_entropy_rows(slice_rows(logits, prefix.tokens.size() - 1, tokens.size()), targets);
    };
    const auto res = mutelab::testing::grad_check(fn, params, 1e-5, 1e-7, 6);
    EXPECT_LT(res.worst_relative, 1e-4) << res.worst_at;
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
    const auto dir = fs::temp_directory_path() / "mutelab_test_ckpt";
    fs::create_directories(dir);
    const AsrModel model(small_config(), 11);
    save_checkpoint(model, dir / "m.ckpt", {{"note", "unit"}});
    const auto loaded = load_checkpoint_with_meta(dir / "m.ckpt");
    EXPECT_EQ(loaded.meta.at("note"), "unit");
    const auto a = model.named_parameters(), b = loaded.model.named_parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].first, b[i].first);
        EXPECT_EQ(std::memcmp(a[i].second.data().data(), b[i].second.data().data(), a[i].second.numel() * 4), 0);
    }
    EXPECT_EQ(loaded.model.config().width, 16);
    EXPECT_EQ(loaded.model.output_projection().dim(0), loaded.model.vocab().size());
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto dir = fs::temp_directory_path() / "mutelab_test_ckpt_bad";
    fs::create_directories(dir);
    const AsrModel model(small_config(), 11);
    save_checkpoint(model, dir / "m.ckpt");
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});

    std::ofstream(dir / "magic.ckpt", std::ios::binary) << "XX" << bytes.substr(2);
    EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), ParseError);
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 10);
    EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), ParseError);

    auto edited = bytes;
    const auto pos = edited.find("\"width\":16");
    ASSERT_NE(pos, std::string::npos);
    edited.replace(pos, 10, "\"width\":18");
    std::ofstream(dir / "shape.ckpt", std::ios::binary) << edited;
    EXPECT_THROW(load_checkpoint(dir / "shape.ckpt"), SchemaError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), ParseError);
}

TEST(Model, CastToDoubleAgrees) {
    const AsrModel model(small_config(), 8);
    const auto dbl = model.cast<double>();
    const auto audio = noise(3200, 9);
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, false);
    NoGradGuard ng;
    const auto a = model.next_log_probs(model.encode(audio), prefix.tokens);
    const auto b = dbl.next_log_probs(dbl.encode(audio), prefix.tokens);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(Decode, EotFirstGivesEmptyTranscript) {
    const Vocab v(4);
    std::vector<double> p(v.size(), 0.01);
    p[static_cast<std::size_t>(v.eot())] = 1.0 - 0.01 * (v.size() - 1);
    const TableStub stub(4, {{{}, p}}, v.size());
    const auto prefix = make_prefix(v, Task::transcribe, false);
    for (const auto& t : {greedy_decode(stub, v, prefix, 10), beam_decode(stub, v, prefix, 5, 10)}) {
        EXPECT_EQ(t.word_count(), 0u);
        EXPECT_EQ(t.tokens, std::vector<int>{v.eot()});
        EXPECT_FALSE(t.truncated);
    }
}

TEST(Decode, CyclingStubSpellsWords) {
    const Vocab v(4);
    auto onehot = [&](int id) {
        std::vector<double> p(v.size(), 0.0);
        p[static_cast<std::size_t>(id)] = 1.0;
        return p;
    };
    const TableStub stub(4, {{{}, onehot(0)}, {{0}, onehot(1)}, {{0, 1}, onehot(v.eot())}}, v.size());
    const auto t = greedy_decode(stub, v, make_prefix(v, Task::transcribe, false), 10);
    EXPECT_EQ(t.words, (std::vector<std::string>{"alpha", "bravo"}));
    EXPECT_EQ(t.tokens.back(), v.eot());
    EXPECT_EQ(t.step_log_probs.size(), 3u);
}

TEST(Decode, MaxLenTruncationIsFlagged) {
    const Vocab v(4);
    std::vector<double> p(v.size(), 0.0);
    p[2] = 1.0;
    const TableStub stub(4, {}, v.size());
    const HashedStub never(v.size(), 1, 0.0);
    const auto t = greedy_decode(TableStub(4, {{{}, p}, {{2}, p}, {{2, 2}, p}}, v.size()), v,
                                 make_prefix(v, Task::transcribe, false), 3);
    EXPECT_TRUE(t.truncated);
    EXPECT_EQ(t.tokens.size(), 3u);
    EXPECT_THROW(greedy_decode(stub, v, make_prefix(v, Task::transcribe, false), 0), ContractViolation);
    EXPECT_THROW(beam_decode(stub, v, make_prefix(v, Task::transcribe, false), 0, 5), ContractViolation);
}

TEST(Decode, GreedyTiesGoToLowestId) {
    const Vocab v(4);
    const TableStub uniform(4, {}, v.size());
    const auto t = greedy_decode(uniform, v, make_prefix(v, Task::transcribe, false), 3);
    EXPECT_EQ(t.tokens, (std::vector<int>{0, 0, 0}));
}

TEST(Decode, BeamOfOneEqualsGreedyOnRandomStubs) {
    const Vocab v(5);
    const auto prefix = make_prefix(v, Task::transcribe, false);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const HashedStub stub(v.size(), s, 1.0 + 0.1 * static_cast<double>(s % 7));
        const auto g = greedy_decode(stub, v, prefix, 6);
        const auto b = beam_decode(stub, v, prefix, 1, 6);
        EXPECT_EQ(g.tokens, b.tokens) << s;
        EXPECT_EQ(g.truncated, b.truncated) << s;
    }
}

TEST(Decode, BeamRecoversSequenceGreedyMisses) {
    // Step 1: alpha 0.5, bravo 0.4; after alpha everything is flat, after
    // bravo eot is near certain. Greedy takes alpha.
    const Vocab v(2);
    const auto n = v.size();
    std::vector<double> first(n, 0.1 / static_cast<double>(n - 2));
    first[0] = 0.5;
    first[1] = 0.4;
    std::vector<double> flat(n, 1.0 / static_cast<double>(n));
    std::vector<double> sure(n, 0.01 / static_cast<double>(n - 1));
    sure[static_cast<std::size_t>(v.eot())] = 0.99;
    std::map<std::vector<int>, std::vector<double>> table{{{}, first}, {{0}, flat}, {{1}, sure}};
    const TableStub stub(4, table, n);
    const auto prefix = make_prefix(v, Task::transcribe, false);
    const auto g = greedy_decode(stub, v, prefix, 3);
    const auto b = beam_decode(stub, v, prefix, 2, 3);
    const auto oracle = exhaustive(stub, v, prefix, 3);
    EXPECT_EQ(g.tokens.front(), 0);
    EXPECT_GT(b.score, g.score);
    EXPECT_EQ(b.tokens, oracle.tokens);
    EXPECT_NEAR(b.score, oracle.score, 1e-12);
}

TEST(Decode, BeamFiveMatchesExhaustiveSearch) {
    const Vocab v(1);  // 1 word + 7 specials = 8 tokens
    ASSERT_EQ(v.size(), 8u);
    const auto prefix = make_prefix(v, Task::transcribe, false);
    int agree = 0;
    for (std::uint64_t s = 0; s < 40; ++s) {
        const HashedStub stub(v.size(), 100 + s, 2.0);
        const auto oracle = exhaustive(stub, v, prefix, 4);
        const auto b = beam_decode(stub, v, prefix, 5, 4);
        agree += b.tokens == oracle.tokens;
        EXPECT_LE(b.score, oracle.score + 1e-12);
    }
    EXPECT_EQ(agree, 40);
}

TEST(Decode, ModelDecodingIsDeterministicAndBeamOneIsGreedy) {
    const AsrModel model(small_config(), 12);
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, true);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto audio = noise(2000 + 20 * s, s, 0.05 + 0.01 * static_cast<double>(s % 5));
        const auto g = greedy_decode(model, audio, prefix, 20);
        const auto b = beam_decode(model, audio, prefix, 1, 20);
        EXPECT_EQ(g.tokens, b.tokens) << s;
        EXPECT_EQ(g.tokens, greedy_decode(model, audio, prefix, 20).tokens);
        EXPECT_TRUE(!g.truncated || g.tokens.size() == max_generated(model, prefix));
        EXPECT_LE(std::count(g.tokens.begin(), g.tokens.end(), model.vocab().eot()), 1);
    }
}
