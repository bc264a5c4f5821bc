#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cast/backbone.hpp"
#include "cast/data.hpp"
#include "cast/inference.hpp"
#include "cast/trainer.hpp"

namespace cast {

/// Cosine similarity of the mean-pooled speech-encoder outputs.
/// Throws std::domain_error when an embedding has zero norm.
double timbre_similarity(const SpeechEncoder& encoder, const MelGrid& a, const MelGrid& b);
double timbre_similarity(const MelGrid& a, const MelGrid& b);

struct StyleScore {
  std::array<bool, kNumAttributes> correct{};
  /// Levels recovered by the oracle; pitch is -1 when no frame was voiced.
  std::array<int, kNumAttributes> predicted{};
};

/// Oracle inversion of `generated` (with its transcription length),
/// quantized like caption_from_params; a level counts as correct when it
/// equals or neighbours the caption's.
StyleScore style_accuracy(const MelGrid& generated, const Caption& caption, int n_chars, const DataConfig& cfg = {});

struct EvalReport {
  double timbre_sim = 0.0;
  std::array<double, kNumAttributes> style_acc{};
  double style_macro = 0.0;
  double pitch_recovery = 0.0;
  double recon_mse = 0.0;
  int n_samples = 0;
};

struct SpeechCase {
  SpeechPrompt prompt;
  std::string target_text;
  MelGrid reference;
  SpeakerParams speaker;
};

struct TextCase {
  Caption caption;
  std::string target_text;
  MelGrid reference;
  SpeakerParams speaker;
};

/// Held-out requests plus the corpus they were cut from.
struct EvalSuite {
  Corpus corpus;
  std::vector<SpeechCase> speech;
  std::vector<TextCase> text;
};

/// One request per pair of `corpus`.
EvalSuite suite_from_corpus(Corpus corpus);
/// Fresh speakers and texts, disjoint in seed from any training corpus.
EvalSuite build_eval_suite(int n_speakers, int n_texts, std::uint64_t seed, const DataConfig& cfg = {});

struct SynthOptions {
  double w = GuidanceScale::kDefault;
  int num_steps = kDefaultOdeSteps;
  std::uint64_t seed = 0;
};

struct EvalResult {
  EvalReport speech;
  EvalReport text;
};

/// Synthesizes every suite request and scores it. Speech requests compare
/// prompt and generation; text requests compare the generation with the
/// held-out recording of the captioned speaker.
EvalResult evaluate(const CastModel& model, const EvalSuite& suite, const SynthOptions& opts = {});

/// Teacher-forced velocity error over the suite's pairs of one modality.
double recon_mse(const CastModel& model, const Corpus& corpus, Modality modality, std::uint64_t seed);

struct AblationVariant {
  std::string name;
  BlockConfig block;
  /// Stages to run; {Base} for end-to-end training.
  std::vector<Stage> stages;
  /// Skips training and evaluates this model instead.
  const CastModel* pretrained = nullptr;
};

struct AblationRow {
  std::string name;
  std::string fusion;
  std::string strategy;
  long optimizer_steps = 0;
  bool ok = true;
  std::string error;
  EvalResult result;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  static const std::vector<std::string>& columns();
  std::string to_tsv() const;
  std::string to_aligned() const;
};

/// Trains each variant with the same corpus, seed and step budget, then
/// evaluates all of them on one suite. A failing variant yields a row
/// marked failed instead of aborting the table.
AblationTable run_ablation(const std::vector<AblationVariant>& variants, const Corpus& corpus,
                           const PipelineConfig& base, const EvalSuite& suite, const SynthOptions& opts = {});

}  // namespace cast
