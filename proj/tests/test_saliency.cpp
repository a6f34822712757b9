#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mutelab/saliency/saliency.hpp"
#include "support/fixtures.hpp"

using namespace mutelab;
using mutelab::testing::noise;
using mutelab::testing::small_config;
namespace fs = std::filesystem;

namespace {

// p(x) = sum(c * x): the gradient is c.
template <typename T>
ProbabilityFn<T> linear(std::vector<T> c) {
    return [c = std::move(c)](const BasicTensor<T>& x) {
        return sum(mul(x, BasicTensor<T>::from({c.size()}, c)));
    };
}

std::vector<float> as_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Saliency, SplitsLinearGradientAtBoundary) {
    const std::vector<float> seg = {0.1f, 0.2f};
    const std::vector<float> speech = {0.3f, 0.4f, 0.5f};
    const auto r = saliency<double>(linear<double>({3, 4, 1, 2, 2}), seg, speech);
    EXPECT_NEAR(r.segment_norm, 5.0, 1e-12);
    EXPECT_NEAR(r.speech_norm, 3.0, 1e-12);
    EXPECT_NEAR(r.full_norm, std::sqrt(34.0), 1e-12);
    EXPECT_NEAR(r.segment_rms(), 5.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(r.speech_rms(), 3.0 / std::sqrt(3.0), 1e-12);
    EXPECT_EQ(r.segment_length, 2u);
    EXPECT_EQ(r.speech_length, 3u);
}

TEST(Saliency, NormConsistencyOnModel) {
    const AsrModel model(small_config(), 7);
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, false);
    for (std::uint64_t k = 0; k < 5; ++k) {
        const auto seg = noise(320, 100 + k, 0.02);
        const auto speech = noise(1800 + 100 * k, 200 + k);
        const auto t = greedy_decode(model, prepend(seg.samples, seg.sample_rate, speech), prefix, 8);
        const auto r = saliency(model, seg.samples, speech.samples, prefix, t, 1);
        const double lhs = r.segment_norm * r.segment_norm + r.speech_norm * r.speech_norm;
        const double rhs = r.full_norm * r.full_norm;
        EXPECT_LE(std::abs(lhs - rhs), 1e-6 * std::max(rhs, 1e-30));
        EXPECT_EQ(r.token, t.tokens.front());
    }
}

TEST(Saliency, MatchesFiniteDifferencesOfTokenProbability) {
    const BasicAsrModel<double> model(small_config(), 9);
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, false);
    const auto seg = noise(320, 1, 0.02);
    const auto speech = noise(2000, 2);
    const int token = model.vocab().eot();
    const auto prob = token_probability(model, prefix.tokens, token);
    const auto r = saliency<double>(prob, seg.samples, speech.samples);

    std::vector<double> joined(seg.samples.begin(), seg.samples.end());
    joined.insert(joined.end(), speech.samples.begin(), speech.samples.end());
    auto eval = [&](const std::vector<double>& x) {
        NoGradGuard no_grad;
        return prob(BasicTensor<double>::from({x.size()}, x)).item();
    };
    const double h = 1e-6;
    for (std::size_t i = 5; i < joined.size(); i += 97) {
        auto plus = joined, minus = joined;
        plus[i] += h;
        minus[i] -= h;
        const double fd = (eval(plus) - eval(minus)) / (2 * h);
        EXPECT_NEAR(r.gradient[i], fd, 1e-3 * std::max(std::abs(fd), 1e-6)) << "sample " << i;
    }
}

TEST(Saliency, DeterministicAndRejectsStepBeyondTranscript) {
    const AsrModel model(small_config(), 2);
    const auto prefix = make_prefix(model.vocab(), Task::transcribe, false);
    const auto seg = noise(320, 5, 0.02);
    const auto speech = noise(1500, 6);
    const auto t = greedy_decode(model, prepend(seg.samples, seg.sample_rate, speech), prefix, 4);
    const auto a = saliency(model, seg.samples, speech.samples, prefix, t, 1);
    const auto b = saliency(model, seg.samples, speech.samples, prefix, t, 1);
    EXPECT_EQ(a.gradient, b.gradient);
    EXPECT_THROW(saliency(model, seg.samples, speech.samples, prefix, t, t.tokens.size() + 1), ContractViolation);
    EXPECT_THROW(saliency(model, seg.samples, speech.samples, prefix, t, 0), ContractViolation);
}

TEST(Saliency, LongerThanContextGetsZeroGradientPastTheWindow) {
    const AsrModel model(small_config(), 3);
    const auto context = model.config().context_samples();
    const auto seg = noise(320, 5, 0.02);
    const auto speech = noise(context, 6);
    const auto r = saliency<float>(token_probability(model, make_prefix(model.vocab(), Task::transcribe, false).tokens,
                                                     model.vocab().eot()),
                                   seg.samples, speech.samples);
    ASSERT_EQ(r.gradient.size(), context + 320);
    for (std::size_t i = context; i < r.gradient.size(); ++i) EXPECT_EQ(r.gradient[i], 0.0);
}

TEST(SaliencyReport, CohortMeansAndPopulationStd) {
    auto make = [](const char* cohort, double seg, double sp) {
        SaliencyRecord r;
        r.cohort = cohort;
        r.segment_length = 4;
        r.speech_length = 9;
        r.segment_norm = seg;
        r.speech_norm = sp;
        return r;
    };
    const auto rows = saliency_report({make("success", 1, 2), make("success", 3, 2), make("failed", 5, 7)});
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].cohort, "success");
    EXPECT_DOUBLE_EQ(rows[0].segment_mean, 2.0);
    EXPECT_DOUBLE_EQ(rows[0].segment_std, 1.0);
    EXPECT_DOUBLE_EQ(rows[0].speech_std, 0.0);
    EXPECT_DOUBLE_EQ(rows[0].segment_rms_mean, 1.0);
    EXPECT_DOUBLE_EQ(rows[1].speech_rms_mean, 7.0 / 3.0);
    EXPECT_EQ(saliency_report({make("failed", 1, 1)}).size(), 1u);
    EXPECT_TRUE(saliency_report({}).empty());
}

TEST(FrameSaliency, SeriesPartitionsTheGradient) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    std::vector<double> c(1000);
    for (auto& v : c) v = nd(rng);
    const auto r = saliency<double>(linear(c), as_float(std::vector<double>(300, 0.0)),
                                    as_float(std::vector<double>(700, 0.0)));
    const auto s = frame_saliency_series(r, 160);
    ASSERT_EQ(s.per_sample.size(), 1000u);
    ASSERT_EQ(s.per_frame.size(), 7u);
    EXPECT_EQ(s.boundary, 300u);
    double seg2 = 0.0, frames2 = 0.0;
    for (std::size_t i = 0; i < 300; ++i) seg2 += s.per_sample[i] * s.per_sample[i];
    for (double f : s.per_frame) frames2 += f * f;
    EXPECT_NEAR(seg2, r.segment_norm * r.segment_norm, 1e-6);
    EXPECT_NEAR(frames2, r.full_norm * r.full_norm, 1e-6);
    EXPECT_NEAR(s.segment_mass_fraction(), seg2 / (r.full_norm * r.full_norm), 1e-12);
    EXPECT_THROW(frame_saliency_series(r, 0), ContractViolation);
}

TEST(FrameSaliency, WritesCsvAndMetadata) {
    const auto dir = fs::temp_directory_path() / "mutelab_saliency_test";
    fs::remove_all(dir);
    const auto r = saliency<double>(linear<double>({1, -2, 3, -4, 5}), as_float({0, 0}), as_float({0, 0, 0}));
    write_frame_saliency(frame_saliency_series(r, 2), dir / "sample0", {{"id", "x"}});
    std::ifstream samples(dir / "sample0.samples.csv");
    std::string line;
    std::getline(samples, line);
    EXPECT_EQ(line, "sample_index,abs_grad");
    std::getline(samples, line);
    EXPECT_EQ(line, "0,1");
    std::getline(samples, line);
    EXPECT_EQ(line, "1,2");
    std::ifstream meta(dir / "sample0.json");
    const auto j = nlohmann::json::parse(meta);
    EXPECT_EQ(j["boundary_sample"], 2);
    EXPECT_EQ(j["id"], "x");
    EXPECT_TRUE(fs::exists(dir / "sample0.frames.csv"));
    fs::remove_all(dir);
}
