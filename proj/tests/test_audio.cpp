#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mutelab/audio/corpus.hpp"
#include "mutelab/audio/wav.hpp"

using namespace mutelab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("mutelab_test_audio_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CorpusConfig small_corpus() {
    CorpusConfig c;
    c.train_per_domain = 4;
    c.dev_per_domain = 2;
    c.test_per_domain = 2;
    return c;
}

}  // namespace

TEST(Wav, ReadsSampleCountAndRate) {
    const auto dir = scratch("count");
    AudioSignal s;
    s.samples.assign(16000, 0.25f);
    write_wav(dir / "a.wav", s);
    const auto back = read_wav(dir / "a.wav");
    EXPECT_EQ(back.size(), 16000u);
    EXPECT_EQ(back.sample_rate, 16000);
}

TEST(Wav, AllZeroPayloadDecodesToExactZeros) {
    AudioSignal s;
    s.samples.assign(321, 0.0f);
    const auto back = parse_wav(encode_wav(s));
    for (float v : back.samples) EXPECT_EQ(v, 0.0f);
}

TEST(Wav, RoundTripWithinQuantizationStep) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    AudioSignal s;
    s.samples.resize(5000);
    for (auto& v : s.samples) v = u(rng);
    s.samples[0] = 1.0f;
    s.samples[1] = -1.0f;
    const auto back = parse_wav(encode_wav(s));
    ASSERT_EQ(back.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_LE(std::abs(back.samples[i] - s.samples[i]), 1.0f / 32768.0f) << i;
    }
}

TEST(Wav, MalformedHeadersNameTheField) {
    AudioSignal s;
    s.samples.assign(10, 0.1f);
    auto bytes = encode_wav(s);

    auto stereo = bytes;
    stereo[22] = 2;
    try {
        parse_wav(stereo);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("num_channels"), std::string::npos);
    }

    auto eight_bit = bytes;
    eight_bit[34] = 8;
    try {
        parse_wav(eight_bit);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("bits_per_sample"), std::string::npos);
    }

    auto not_riff = bytes;
    not_riff[0] = 'X';
    try {
        parse_wav(not_riff);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("RIFF"), std::string::npos);
    }

    std::vector<unsigned char> truncated(bytes.begin(), bytes.begin() + 30);
    EXPECT_THROW(parse_wav(truncated), ParseError);
}

TEST(Prepend, LengthsAndContentAreExact) {
    AudioSignal seg, x;
    seg.samples.assign(10240, 0.02f);
    x.samples.resize(16000);
    for (std::size_t i = 0; i < x.size(); ++i) x.samples[i] = static_cast<float>(i % 97) / 200.0f;
    const auto y = prepend(seg, x);
    ASSERT_EQ(y.size(), 26240u);
    EXPECT_TRUE(std::equal(seg.samples.begin(), seg.samples.end(), y.samples.begin()));
    EXPECT_TRUE(std::equal(x.samples.begin(), x.samples.end(), y.samples.begin() + 10240));
    EXPECT_EQ(prepend(seg, y).size(), 2 * 10240u + 16000u);
}

TEST(Prepend, EmptySegmentIsIdentity) {
    AudioSignal seg, x;
    x.samples = {0.1f, -0.2f, 0.3f};
    EXPECT_EQ(prepend(seg, x).samples, x.samples);
}

TEST(Prepend, RateMismatchIsContractViolation) {
    AudioSignal seg, x;
    seg.sample_rate = 8000;
    seg.samples = {0.0f};
    x.samples = {0.0f};
    EXPECT_THROW(prepend(seg, x), ContractViolation);
}

TEST(Corpus, SameSeedGivesIdenticalFiles) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    synth_corpus(small_corpus(), 7, a);
    synth_corpus(small_corpus(), 7, b);
    EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
    for (const auto& entry : fs::recursive_directory_iterator(a / "audio")) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a);
        EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    }
    const auto c = scratch("det_c");
    synth_corpus(small_corpus(), 8, c);
    EXPECT_NE(slurp(a / "manifest.jsonl"), slurp(c / "manifest.jsonl"));
}

TEST(Corpus, UtteranceDurationIsWordsPlusSilence) {
    CorpusConfig c;
    c.lead_silence_min = c.lead_silence_max = 0.1;
    c.tail_silence = 0.05;
    std::mt19937_64 rng(1);
    const auto audio = render_utterance(c, c.domains[0], {0, 1, 2, 3, 4}, rng);
    EXPECT_EQ(audio.size(), static_cast<std::size_t>((1.0 + 0.1 + 0.05) * 16000));
}

TEST(Corpus, ManifestIsConsistent) {
    const auto dir = scratch("manifest");
    const auto written = synth_corpus(small_corpus(), 3, dir);
    const auto m = read_manifest(dir);
    ASSERT_EQ(m.entries.size(), written.entries.size());
    EXPECT_EQ(m.seed, 3u);
    const Vocab vocab(32);
    EXPECT_EQ(m.vocab_id, vocab.id());
    std::set<std::string> paths;
    for (const auto& e : m.entries) {
        EXPECT_TRUE(e.split == "train" || e.split == "dev" || e.split == "test");
        EXPECT_TRUE(paths.insert(e.path).second) << "duplicate entry " << e.path;
        for (const auto& w : e.words) EXPECT_NO_THROW(vocab.word_id(w));
        const auto audio = read_wav(m.audio_path(e));
        EXPECT_NO_THROW(validate(audio));
        EXPECT_GE(e.words.size(), 3u);
        EXPECT_LE(e.words.size(), 8u);
    }
    EXPECT_EQ(m.select("train").size(), 8u);
    EXPECT_EQ(m.select("test", "noisy").size(), 2u);
}

TEST(Corpus, RejectsOversizedVocabulary) {
    auto c = small_corpus();
    c.vocab_size = kMaxSignatures + 1;
    EXPECT_THROW(synth_corpus(c, 1, scratch("oversize")), ContractViolation);
}

TEST(Corpus, UnwritableDirectoryFails) {
    EXPECT_ANY_THROW(synth_corpus(small_corpus(), 1, "/proc/mutelab_cannot_write_here"));
}

TEST(Corpus, ManifestRejectsUnknownFields) {
    const auto dir = scratch("badmanifest");
    std::ofstream(dir / "manifest.jsonl") << R"({"path":"a.wav","words":[],"split":"train","domain":"clean","x":1})"
                                          << "\n";
    EXPECT_THROW(read_manifest(dir), SchemaError);
}
