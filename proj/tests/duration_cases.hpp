#pragma once

#include <string>

#include "cast/timbre.hpp"

namespace cast::testing {

// Hand-computed frame counts. Speech rows are round(ref_frames * |gen| / |ref|)
// with a floor of one frame; caption rows are |gen| * round(4 / midpoint).
struct DurationCase {
  bool caption;
  std::string ref_text;
  int ref_frames;
  int rate_level;
  std::string gen_text;
  int expected;
};

inline const DurationCase kDurationCases[] = {
    {false, "abc", 12, 0, "abcdef", 24},
    {false, "ab ", 10, 0, "a", 3},         // 3.33 rounds down
    {false, "abcd", 10, 0, "ab", 5},
    {false, "abcd", 10, 0, "abcdef", 15},
    {false, "ab", 5, 0, "abc", 8},          // 7.5 rounds away from zero
    {false, "abcdefgh", 3, 0, "a", 1},      // 0.375 clamps to one frame
    {false, "abc", 7, 0, "ab", 5},          // 4.67
    {true, "", 0, 0, "abc de", 36},         // 4 / 0.65 = 6.15 -> 6 per char
    {true, "", 0, 1, "ab", 8},              // 4 per char
    {true, "", 0, 2, "abcd", 12},           // 4 / 1.6 = 2.5 -> 3 per char
};

inline Caption caption_with_rate(int level) { return Caption{{1, 1, level, 1}}; }

}  // namespace cast::testing
