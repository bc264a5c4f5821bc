#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "cast/data.hpp"
#include "cast/inference.hpp"
#include "duration_cases.hpp"
#include "support.hpp"

using namespace cast;

namespace {

CastModel perturbed_model() {
  CastModel m(ModelConfig{}, 2);
  cast::testing::randomize_params(m, 3, 0.1);
  return m;
}

SynthesisRequest speech_request(std::uint64_t seed, double w) {
  const Utterance u = gen_utterance({1, 0.3, 1.0, 0.4}, "abc def", 5);
  return SynthesisRequest{"gha bt", SpeechPrompt{u.mel, u.text}, GuidanceScale(w), 8, seed};
}

}  // namespace

TEST(Inference, DurationTable) {
  for (const auto& c : cast::testing::kDurationCases) {
    const int got = c.caption ? duration_from_caption(cast::testing::caption_with_rate(c.rate_level), c.gen_text)
                              : duration_from_speech(c.ref_text, c.ref_frames, c.gen_text);
    EXPECT_EQ(got, c.expected) << c.gen_text;
  }
  EXPECT_THROW(duration_from_speech("", 4, "a"), std::invalid_argument);
  EXPECT_THROW(duration_from_speech("a", 0, "a"), std::invalid_argument);
  EXPECT_THROW(duration_from_caption(Caption{{0, 0, 0, 0}}, ""), std::invalid_argument);
}

// The caption estimate should land within a quarter of the real length
// for every generated utterance.
TEST(Inference, CaptionDurationTracksGeneratedLength) {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const SpeakerParams s = sample_speaker(rng);
    const std::string text = sample_text(rng);
    const int actual = static_cast<int>(text.size()) * frames_per_char(s.rate, 4);
    const int est = duration_from_caption(caption_from_params(s), text);
    EXPECT_LE(std::abs(est - actual), 0.25 * actual) << s.rate;
  }
}

TEST(Inference, UnitGuidanceCollapsesToConditionalSampler) {
  const CastModel model = perturbed_model();
  const SynthesisRequest req = speech_request(9, 1.0);
  EXPECT_EQ(synthesize(model, req), synthesize_conditional_only(model, req));

  const SynthesisRequest text{"ab cd", Caption{{0, 2, 1, 1}}, GuidanceScale(1.0), 6, 4};
  EXPECT_EQ(synthesize(model, text), synthesize_conditional_only(model, text));
}

TEST(Inference, GuidanceChangesOutput) {
  const CastModel model = perturbed_model();
  EXPECT_NE(synthesize(model, speech_request(9, 3.0)), synthesize(model, speech_request(9, 1.0)));
}

TEST(Inference, CountsFunctionEvaluations) {
  const CastModel model = perturbed_model();
  NfeCounter guided, plain;
  synthesize(model, speech_request(1, 3.0), &guided);
  synthesize(model, speech_request(1, 1.0), &plain);
  EXPECT_EQ(guided.count.load(), 16);
  EXPECT_EQ(plain.count.load(), 8);
}

TEST(Inference, OutputShapeFollowsDuration) {
  const CastModel model = perturbed_model();
  const SynthesisRequest req = speech_request(3, 2.0);
  const auto& prompt = std::get<SpeechPrompt>(req.prompt);
  const MelGrid out = synthesize(model, req);
  EXPECT_EQ(out.rows(), duration_from_speech(prompt.ref_text, prompt.mel.rows(), req.target_text));
  EXPECT_EQ(out.cols(), model.config().n_mels);
  EXPECT_TRUE(out.all_finite());
  EXPECT_EQ(synthesize(model, req), out);
  EXPECT_NE(synthesize(model, speech_request(4, 2.0)), out);
}

TEST(Inference, RejectsBadRequests) {
  const CastModel model = perturbed_model();
  SynthesisRequest req = speech_request(1, 2.0);
  req.target_text = "";
  EXPECT_THROW(synthesize(model, req), std::invalid_argument);
  req = speech_request(1, 2.0);
  req.target_text = "xyz";
  EXPECT_THROW(synthesize(model, req), std::invalid_argument);
  req = speech_request(1, 2.0);
  req.num_steps = 0;
  EXPECT_THROW(synthesize(model, req), std::invalid_argument);
  req = speech_request(1, 2.0);
  std::get<SpeechPrompt>(req.prompt).mel = MelGrid(3, 7);
  EXPECT_THROW(synthesize(model, req), std::invalid_argument);
}

TEST(Inference, MelFileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "cast_mel_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "out.mel").string();
  Rng rng(1);
  MelGrid m = cast::testing::random_matrix(5, 16, rng);
  round_to_float(m);
  write_mel(path, m, speech_request(1, 2.0));
  EXPECT_EQ(read_mel(path), m);
  EXPECT_TRUE(std::filesystem::exists(path + ".txt"));
  std::filesystem::remove_all(dir);
}

TEST(Inference, PriorNoiseIsSeeded) {
  EXPECT_EQ(prior_noise(4, 3, 7), prior_noise(4, 3, 7));
  EXPECT_NE(prior_noise(4, 3, 7), prior_noise(4, 3, 8));
}
