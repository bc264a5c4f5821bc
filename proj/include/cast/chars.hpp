#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cast {

/// Toy character vocabulary: id 0 is the filler token, id 1 the space,
/// ids 2.. the letters 'a'..'t'.
namespace vocab {

inline constexpr int kFiller = 0;
inline constexpr int kSpace = 1;
inline constexpr char kFirstLetter = 'a';
inline constexpr char kLastLetter = 't';
inline constexpr int kLetters = kLastLetter - kFirstLetter + 1;
inline constexpr int kSize = 2 + kLetters;

bool is_valid_char(char c);
int id_of(char c);
char char_of(int id);

}  // namespace vocab

/// Transcription as token ids (never containing the filler).
struct CharSeq {
  std::vector<int> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  bool empty() const { return tokens.empty(); }
  friend bool operator==(const CharSeq&, const CharSeq&) = default;
};

/// Throws std::invalid_argument for characters outside the toy alphabet.
CharSeq tokenize(std::string_view text);
std::string detokenize(const CharSeq& chars);

}  // namespace cast
