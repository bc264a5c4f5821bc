#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cast/backbone.hpp"
#include "cast/data.hpp"
#include "cast/eval.hpp"
#include "cast/trainer.hpp"

namespace cast {

struct CorpusConfig {
  int n_speakers = 20;
  int n_texts = 50;
  DataConfig data;
};

struct EvalConfig {
  int n_speakers = 10;
  int n_texts = 5;
  SynthOptions synth;
};

/// Everything a CLI run needs; loaded from JSON, then overridden by flags.
struct RunConfig {
  PipelineConfig pipeline;
  CorpusConfig corpus;
  EvalConfig eval;

  std::uint64_t seed() const { return pipeline.seed; }
  /// Throws std::invalid_argument listing every violated field.
  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Seeds for the training corpus and the held-out suite derived from the
/// run seed.
std::uint64_t corpus_seed(const RunConfig& cfg);
std::uint64_t eval_seed(const RunConfig& cfg);

}  // namespace cast
