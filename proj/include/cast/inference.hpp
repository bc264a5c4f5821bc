#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "cast/backbone.hpp"
#include "cast/flow.hpp"
#include "cast/timbre.hpp"

namespace cast {

struct SpeechPrompt {
  MelGrid mel;
  std::string ref_text;
};

struct SynthesisRequest {
  std::string target_text;
  std::variant<SpeechPrompt, Caption> prompt;
  GuidanceScale guidance{};
  int num_steps = kDefaultOdeSteps;
  std::uint64_t seed = 0;

  void validate() const;
};

/// round(ref_frames * len(gen_text) / len(ref_text)), at least 1.
int duration_from_speech(std::string_view ref_text, int ref_frames, std::string_view gen_text);

/// Representative speaking rate of each caption rate level.
inline constexpr double kRateMidpoints[3] = {0.65, 1.0, 1.6};

/// len(gen_text) * round(base_frames / midpoint(caption rate level)).
int duration_from_caption(const Caption& caption, std::string_view gen_text, int base_frames = 4);

/// Everything the sampler needs besides the noise.
struct PreparedConditions {
  int frames = 0;
  Matrix cond;
  TimbreSeq timbre;
};

PreparedConditions prepare_conditions(const CastModel& model, const SynthesisRequest& req, int base_frames = 4);

/// Counts backbone evaluations made by synthesize.
struct NfeCounter {
  std::atomic<long> count{0};
};

/// x1 ~ N(0, I) drawn from `seed` for a frames x n_mels grid.
MelGrid prior_noise(int frames, int n_mels, std::uint64_t seed);

MelGrid synthesize(const CastModel& model, const SynthesisRequest& req, NfeCounter* nfe = nullptr,
                   int base_frames = 4);

/// Sampler that only evaluates the conditional branch.
MelGrid synthesize_conditional_only(const CastModel& model, const SynthesisRequest& req, int base_frames = 4);

/// Writes `mel` in the corpus float format plus "<path>.txt" with
/// frames, bins, seed, w and num_steps.
void write_mel(const std::string& path, const MelGrid& mel, const SynthesisRequest& req);
MelGrid read_mel(const std::string& path);

}  // namespace cast
