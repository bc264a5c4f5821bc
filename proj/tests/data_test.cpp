#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "cast/binio.hpp"
#include "cast/data.hpp"
#include "cast/eval.hpp"
#include "cast/timbre.hpp"

using namespace cast;

namespace {

int count_levels(double v, double lo, double hi) { return (v >= lo ? 1 : 0) + (v > hi ? 1 : 0); }

Caption reference_caption(const SpeakerParams& s) {
  return Caption{{count_levels(s.tilt, -1.0 / 3.0, 1.0 / 3.0), s.pitch_idx, count_levels(s.rate, 0.8, 1.25),
                  count_levels(s.expressiveness, 0.33, 0.66)}};
}

}  // namespace

TEST(Data, UtteranceLayout) {
  const SpeakerParams s{2, -0.4, 0.8, 0.3};
  const Utterance u = gen_utterance(s, "abc de fgh", 9);
  EXPECT_EQ(u.frames_per_char, 5);
  EXPECT_EQ(u.mel.rows(), 50);
  EXPECT_EQ(u.mel.cols(), DataConfig{}.n_mels);
  EXPECT_EQ(u.word_bounds, (std::vector<int>{20, 35}));
  EXPECT_EQ(detokenize(u.chars), "abc de fgh");
  for (double v : u.mel.values()) EXPECT_EQ(static_cast<double>(static_cast<float>(v)), v);
  EXPECT_EQ(gen_utterance(s, "abc de fgh", 9).mel, u.mel);
  EXPECT_NE(gen_utterance(s, "abc de fgh", 10).mel, u.mel);
}

TEST(Data, FramesPerCharRounds) {
  EXPECT_EQ(frames_per_char(1.0, 4), 4);
  EXPECT_EQ(frames_per_char(0.5, 4), 8);
  EXPECT_EQ(frames_per_char(2.0, 4), 2);
  EXPECT_EQ(frames_per_char(1.6, 4), 3);  // 2.5 rounds away from zero
  EXPECT_EQ(frames_per_char(0.7, 4), 6);  // 5.71
}

TEST(Data, SplitIsUniformOverWordBoundaries) {
  const Utterance u = gen_utterance({0, 0.0, 1.0, 0.5}, "abc de fgh ij", 3);
  ASSERT_EQ(u.word_bounds.size(), 3u);
  Rng rng(4);
  std::map<std::string, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const SpeechPair p = split_prompt_target(u, rng);
    EXPECT_EQ(p.prompt_text + p.target_text, u.text);
    EXPECT_EQ(p.prompt_mel.rows() + p.target_mel.rows(), u.mel.rows());
    EXPECT_EQ(p.prompt_mel.rows(), static_cast<int>(p.prompt_text.size()) * u.frames_per_char);
    ++counts[p.target_text];
  }
  ASSERT_EQ(counts.size(), 3u);
  const double sigma = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
  for (const auto& [text, c] : counts) EXPECT_NEAR(c, n / 3.0, 4 * sigma) << text;
  EXPECT_EQ(counts.count("de fgh ij"), 1u);
}

TEST(Data, SingleWordUtteranceIsSkipped) {
  const Utterance u = gen_utterance({0, 0.0, 1.0, 0.5}, "abcd", 3);
  Rng rng(1);
  EXPECT_THROW(split_prompt_target(u, rng), SkipError);
}

TEST(Data, CaptionMatchesIndependentQuantizer) {
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    SpeakerParams s{rng.uniform_int(0, 2), rng.uniform(-1, 1), rng.uniform(0.5, 2.0), rng.uniform()};
    EXPECT_EQ(caption_from_params(s), reference_caption(s));
  }
  for (double t : {-1.0 / 3.0, 1.0 / 3.0}) {
    const SpeakerParams s{0, t, 0.8, 0.66};
    EXPECT_EQ(caption_from_params(s), reference_caption(s));
  }
}

TEST(Data, EveryCaptionHasDistinctEncoding) {
  const TextEncoder enc = TextEncoder::make_frozen(48);
  std::set<std::vector<double>> seen;
  int n = 0;
  for (int g = 0; g < 3; ++g)
    for (int p = 0; p < 3; ++p)
      for (int r = 0; r < 3; ++r)
        for (int e = 0; e < 3; ++e) {
          const Matrix m = enc.encode(Caption{{g, p, r, e}});
          seen.insert(std::vector<double>(m.values().begin(), m.values().end()));
          ++n;
        }
  EXPECT_EQ(n, 81);
  EXPECT_EQ(seen.size(), 81u);
}

TEST(Data, CaptionRoundTripsThroughText) {
  const Caption c{{2, 0, 1, 2}};
  EXPECT_EQ(Caption::parse(c.to_string()), c);
  EXPECT_THROW(Caption::parse("gender=3,pitch=0,rate=1,expressiveness=2"), std::invalid_argument);
  EXPECT_THROW(Caption::parse("pitch=0"), std::invalid_argument);
}

TEST(Data, OracleRecoversGeneratorParameters) {
  Rng rng(21);
  const DataConfig cfg;
  int pitch_ok = 0;
  for (int i = 0; i < 100; ++i) {
    const SpeakerParams s = sample_speaker(rng);
    const std::string text = sample_text(rng, cfg);
    const Utterance u = gen_utterance(s, text, rng.next_u64(), cfg);
    const OracleEstimate est = invert_attributes(u.mel, static_cast<int>(text.size()), cfg);
    pitch_ok += est.pitch_idx == s.pitch_idx;
    EXPECT_NEAR(est.tilt, s.tilt, 0.05);
    EXPECT_NEAR(est.expressiveness, s.expressiveness, 0.2);
    const double fpc = frames_per_char(s.rate, cfg.base_frames);
    EXPECT_NEAR(est.rate, cfg.base_frames / fpc, 1e-9);
  }
  EXPECT_EQ(pitch_ok, 100);
}

// Same speaker, different texts versus different speakers over a 10 x 10
// grid of recordings.
TEST(Data, SpeakerEncoderSeparatesSpeakers) {
  Rng rng(31);
  std::vector<SpeakerParams> speakers;
  for (int i = 0; i < 10; ++i) speakers.push_back(sample_speaker(rng));
  double same = 0.0, cross = 0.0;
  for (int a = 0; a < 10; ++a) {
    const MelGrid ma = gen_utterance(speakers[a], "abc def gh", 100 + a).mel;
    for (int b = 0; b < 10; ++b)
      (a == b ? same : cross) += timbre_similarity(ma, gen_utterance(speakers[b], "ijk lmn", 200 + b).mel);
  }
  same /= 10;
  cross /= 90;
  EXPECT_GT(same, 0.7);
  EXPECT_GT(same - cross, 0.3) << same << " vs " << cross;
}

TEST(Data, SampledSpeakersHitEveryCaptionLevel) {
  Rng rng(41);
  std::array<std::set<int>, kNumAttributes> levels;
  for (int i = 0; i < 500; ++i) {
    const SpeakerParams s = sample_speaker(rng);
    EXPECT_NO_THROW(s.validate());
    const Caption c = caption_from_params(s);
    for (int k = 0; k < kNumAttributes; ++k) levels[k].insert(c.levels[k]);
  }
  for (const auto& l : levels) EXPECT_EQ(l.size(), 3u);
}

TEST(Data, SampledTextsUseTheAlphabet) {
  Rng rng(5);
  const DataConfig cfg;
  for (int i = 0; i < 200; ++i) {
    const std::string t = sample_text(rng, cfg);
    EXPECT_NO_THROW(tokenize(t));
    const auto words = std::count(t.begin(), t.end(), ' ') + 1;
    EXPECT_GE(words, cfg.min_words);
    EXPECT_LE(words, cfg.max_words);
  }
}

TEST(Data, CorpusIsCartesianAndSeeded) {
  const Corpus c = build_corpus(3, 4, 17);
  EXPECT_EQ(c.speakers.size(), 3u);
  EXPECT_EQ(c.texts.size(), 4u);
  EXPECT_EQ(c.speech.size(), 12u);
  EXPECT_EQ(c.text.size(), 12u);
  for (const TextPair& p : c.text)
    EXPECT_EQ(p.caption, caption_from_params(c.speakers.at(static_cast<std::size_t>(p.speaker_index))));
  EXPECT_EQ(serialize_corpus(build_corpus(3, 4, 17)), serialize_corpus(c));
  EXPECT_NE(serialize_corpus(build_corpus(3, 4, 18)), serialize_corpus(c));
}

TEST(Data, CorpusRoundTripsBitExactly) {
  const Corpus c = build_corpus(4, 3, 5);
  const std::string bytes = serialize_corpus(c);
  const Corpus back = deserialize_corpus(bytes);
  EXPECT_EQ(serialize_corpus(back), bytes);
  ASSERT_EQ(back.speech.size(), c.speech.size());
  for (std::size_t i = 0; i < c.speech.size(); ++i) {
    EXPECT_EQ(back.speech[i].prompt_mel, c.speech[i].prompt_mel);
    EXPECT_EQ(back.speech[i].target_text, c.speech[i].target_text);
  }
  EXPECT_EQ(back.speakers, c.speakers);
}

TEST(Data, CorruptCorpusIsRejected) {
  const std::string bytes = serialize_corpus(build_corpus(2, 2, 5));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_corpus(bad), FormatError);
  EXPECT_THROW(deserialize_corpus(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_corpus(bytes + "x"), FormatError);
  EXPECT_THROW(deserialize_corpus(""), FormatError);
}

TEST(Data, InvalidSpeakerIsRejected) {
  EXPECT_THROW(gen_utterance({3, 0.0, 1.0, 0.5}, "ab cd", 1), std::invalid_argument);
  EXPECT_THROW(gen_utterance({0, 1.5, 1.0, 0.5}, "ab cd", 1), std::invalid_argument);
  EXPECT_THROW(gen_utterance({0, 0.0, 3.0, 0.5}, "ab cd", 1), std::invalid_argument);
  EXPECT_THROW(gen_utterance({0, 0.0, 1.0, 0.5}, "ab zz", 1), std::invalid_argument);
}
