#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "cast/matrix.hpp"

namespace cast {

enum class Modality : std::uint8_t { Speech = 0, Text = 1 };

const char* to_string(Modality m);

/// Shared conditioning sequence (T x D) from either timbre branch.
struct TimbreSeq {
  Matrix frames;
  Modality modality = Modality::Speech;

  int length() const { return frames.rows(); }
  int dim() const { return frames.cols(); }
  /// Throws std::invalid_argument unless T >= 1, D == expected_dim and all
  /// values are finite.
  void validate(int expected_dim) const;
};

enum class Attribute : int { Gender = 0, Pitch = 1, Rate = 2, Expressiveness = 3 };

inline constexpr int kNumAttributes = 4;
inline constexpr std::array<int, kNumAttributes> kAttributeArity = {3, 3, 3, 3};
inline constexpr std::array<const char*, kNumAttributes> kAttributeNames = {"gender", "pitch", "rate",
                                                                            "expressiveness"};

/// Structured caption: one discrete level per speaker attribute.
struct Caption {
  std::array<int, kNumAttributes> levels{};

  int level(Attribute a) const { return levels[static_cast<std::size_t>(a)]; }
  void validate() const;
  /// "gender=1,pitch=0,rate=2,expressiveness=1"
  std::string to_string() const;
  static Caption parse(std::string_view text);

  friend bool operator==(const Caption&, const Caption&) = default;
};

inline constexpr std::uint64_t kSpeechEncoderSeed = 0x5bd1e995ULL;
inline constexpr std::uint64_t kTextEncoderSeed = 0x27d4eb2fULL;

/// Frozen stand-in for a pretrained speaker encoder: per-chunk mean and
/// standard deviation of every bin, then a fixed affine map and tanh.
class SpeechEncoder {
 public:
  static constexpr int kDefaultChunkSize = 8;

  SpeechEncoder(Matrix weight, Matrix bias, int chunk_size);
  /// Weights drawn from a fixed seed; identical across processes.
  static SpeechEncoder make_frozen(int n_mels, int dim, int chunk_size = kDefaultChunkSize,
                                   std::uint64_t seed = kSpeechEncoderSeed);

  int chunk_size() const { return chunk_size_; }
  int dim() const { return weight_.cols(); }
  const Matrix& weight() const { return weight_; }
  const Matrix& bias() const { return bias_; }

  /// (frames / chunk_size) x (2 * n_mels) statistics.
  Matrix chunk_features(const MelGrid& prompt) const;
  TimbreSeq encode(const MelGrid& prompt) const;

 private:
  Matrix weight_;
  Matrix bias_;
  int chunk_size_;
};

/// Frozen stand-in for a pretrained caption encoder.
class TextEncoder {
 public:
  TextEncoder(Matrix level_table, Matrix position_tags);
  static TextEncoder make_frozen(int dim, std::uint64_t seed = kTextEncoderSeed);

  int dim() const { return table_.cols(); }
  const Matrix& level_table() const { return table_; }
  const Matrix& position_tags() const { return tags_; }

  /// Per-attribute level embedding plus position tag, before mixing.
  Matrix lookup(const Caption& caption) const;
  /// Each position averaged half-and-half with the sequence mean.
  Matrix encode(const Caption& caption) const;

  static int table_row(Attribute a, int level);

 private:
  Matrix table_;
  Matrix tags_;
};

/// Per-position affine map text_embeds * weight + bias into timbre space.
TimbreSeq project(const Matrix& text_embeds, const Matrix& weight, const Matrix& bias);

}  // namespace cast
