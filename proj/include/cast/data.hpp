#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cast/chars.hpp"
#include "cast/matrix.hpp"
#include "cast/rng.hpp"
#include "cast/timbre.hpp"

namespace cast {

/// Ground-truth timbre of a synthetic speaker.
struct SpeakerParams {
  int pitch_idx = 0;            // 0..2
  double tilt = 0.0;            // [-1, 1]
  double rate = 1.0;            // [0.5, 2.0]
  double expressiveness = 0.0;  // [0, 1]

  void validate() const;
  friend bool operator==(const SpeakerParams&, const SpeakerParams&) = default;
};

/// Knobs of the toy spectrogram generator.
struct DataConfig {
  int n_mels = 16;
  int base_frames = 4;
  double noise_std = 0.05;
  double tilt_gain = 0.6;
  double modulation_depth = 0.5;
  int modulation_period = 8;
  double bump_width = 0.6;
  double secondary_gain = 0.45;
  // Sampling of synthetic texts.
  int min_words = 2;
  int max_words = 4;
  int min_word_len = 3;
  int max_word_len = 5;

  void validate() const;
};

/// Bins are laid out so that every letter's primary bump sits on
/// 1 + 3k + pitch_idx; (peak_bin - 1) mod 3 therefore reveals the pitch.
inline constexpr int kPitchLevels = 3;
inline constexpr int kFormantSpacing = 3;
inline constexpr int kFirstFormantBin = 1;

struct Utterance {
  MelGrid mel;
  CharSeq chars;
  std::string text;
  /// First frame of every word after the first.
  std::vector<int> word_bounds;
  int frames_per_char = 0;
  SpeakerParams speaker;
};

struct SpeechPair {
  MelGrid prompt_mel;
  MelGrid target_mel;
  CharSeq target_chars;
  std::string prompt_text;
  std::string target_text;
  int speaker_index = -1;
};

struct TextPair {
  Caption caption;
  MelGrid target_mel;
  CharSeq target_chars;
  std::string target_text;
  int speaker_index = -1;
};

/// Raised when an utterance cannot yield a prompt/target pair.
class SkipError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int frames_per_char(double rate, int base_frames);

Utterance gen_utterance(const SpeakerParams& speaker, std::string_view text, std::uint64_t seed,
                        const DataConfig& cfg = {});

/// Splits at a uniformly chosen interior word boundary.
SpeechPair split_prompt_target(const Utterance& u, Rng& rng);

Caption caption_from_params(const SpeakerParams& speaker);

SpeakerParams sample_speaker(Rng& rng);
std::string sample_text(Rng& rng, const DataConfig& cfg = {});

struct Corpus {
  DataConfig config;
  std::uint64_t seed = 0;
  std::vector<SpeakerParams> speakers;
  std::vector<std::string> texts;
  std::vector<SpeechPair> speech;
  std::vector<TextPair> text;
};

Corpus build_corpus(int n_speakers, int n_texts, std::uint64_t seed, const DataConfig& cfg = {});
/// Cartesian speaker x text corpus over explicit inputs.
Corpus build_corpus(std::vector<SpeakerParams> speakers, std::vector<std::string> texts, std::uint64_t seed,
                    const DataConfig& cfg = {});

inline constexpr char kCorpusMagic[8] = {'C', 'A', 'S', 'T', '-', 'D', 'S', '\0'};
inline constexpr std::uint32_t kCorpusVersion = 1;

std::string serialize_corpus(const Corpus& corpus);
Corpus deserialize_corpus(std::string_view bytes);
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

/// Attribute values recovered from a spectrogram by inverting the
/// generator.
struct OracleEstimate {
  int pitch_idx = -1;  // -1 when no voiced frame was found
  double tilt = 0.0;
  double rate = 0.0;
  double expressiveness = 0.0;
  int voiced_frames = 0;
};

OracleEstimate invert_attributes(const MelGrid& mel, int n_chars, const DataConfig& cfg = {});

}  // namespace cast
