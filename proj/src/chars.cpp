#include "cast/chars.hpp"

#include <stdexcept>

namespace cast {

namespace vocab {

bool is_valid_char(char c) { return c == ' ' || (c >= kFirstLetter && c <= kLastLetter); }

int id_of(char c) {
  if (c == ' ') return kSpace;
  if (c >= kFirstLetter && c <= kLastLetter) return 2 + (c - kFirstLetter);
  throw std::invalid_argument(std::string("character '") + c + "' is outside the toy alphabet");
}

char char_of(int id) {
  if (id == kSpace) return ' ';
  if (id >= 2 && id < kSize) return static_cast<char>(kFirstLetter + (id - 2));
  throw std::invalid_argument("token id " + std::to_string(id) + " has no character");
}

}  // namespace vocab

CharSeq tokenize(std::string_view text) {
  CharSeq out;
  out.tokens.reserve(text.size());
  for (char c : text) out.tokens.push_back(vocab::id_of(c));
  return out;
}

std::string detokenize(const CharSeq& chars) {
  std::string out;
  out.reserve(chars.tokens.size());
  for (int id : chars.tokens) out.push_back(vocab::char_of(id));
  return out;
}

}  // namespace cast
