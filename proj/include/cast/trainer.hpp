#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cast/backbone.hpp"
#include "cast/data.hpp"
#include "cast/params.hpp"
#include "cast/rng.hpp"

namespace cast {

/// Training stages. Base is single-stage end-to-end training on the
/// combined data, used by the training-strategy ablation.
enum class Stage : int { Base = 0, One = 1, Two = 2, Three = 3 };

const char* to_string(Stage s);
/// Accepts "1", "2", "3" and "base".
Stage parse_stage(std::string_view name);

enum class DatasetMix { SpeechOnly, TextOnly, Combined };

const char* to_string(DatasetMix m);

/// True for the stand-in encoder parameters, which no stage may train.
bool is_encoder_param(const std::string& name);
bool is_projector_param(const std::string& name);

struct StageConfig {
  Stage stage = Stage::One;
  int steps = 1;
  double peak_lr = 1e-3;
  DatasetMix mix = DatasetMix::SpeechOnly;
  std::function<bool(const std::string&)> trainable;

  /// Canonical trainable set and data mix for `stage`.
  static StageConfig make(Stage stage, int steps, double peak_lr);
};

struct TrainConfig {
  int batch_size = 16;
  double warmup_frac = 0.05;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double p_drop = 0.1;
  int log_interval = 10;

  void validate() const;
};

/// Linear warmup over the first warmup_frac of the steps, then linear
/// decay to zero at stage.steps.
double lr_at(int step, const StageConfig& stage, double warmup_frac = 0.05);

/// Adaptive-moment state. Only trainable parameters carry accumulators;
/// every other slot holds an empty matrix.
struct OptState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;

  static OptState for_params(const ParamStore& params);
  bool has_state(std::size_t index) const { return !m.at(index).empty(); }
};

/// One AdamW step with decoupled weight decay on the trainable
/// parameters. `grads` is indexed like `params`; entries of untrainable
/// parameters are ignored.
void apply_update(ParamStore& params, std::span<const Matrix> grads, OptState& opt, double lr,
                  const TrainConfig& cfg = {});

/// Indexes one training pair of the corpus.
struct BatchItem {
  Modality modality = Modality::Speech;
  std::size_t index = 0;
  bool cfg_drop = false;
};

/// Flags each item for joint condition dropout with probability p_drop;
/// returns the number of flagged items.
int drop_conditions(std::vector<BatchItem>& batch, double p_drop, Rng& rng);

struct MetricRecord {
  long step = 0;
  Stage stage = Stage::One;
  double loss = 0.0;
  double lr = 0.0;

  /// {"step":..,"stage":"1","loss":..,"lr":..}
  std::string to_json_line() const;
};

using MetricSink = std::function<void(const MetricRecord&)>;

/// Mini-batch loss and parameter gradients for one batch. Each item's
/// loss is its mean squared velocity error; items are weighted by their
/// frame count, which equals a masked mean over the padded batch.
double batch_loss_and_grads(const CastModel& model, const Corpus& corpus, std::span<const BatchItem> batch,
                            std::uint64_t noise_seed, std::vector<Matrix>* grads);

struct StageResult {
  std::vector<MetricRecord> log;
  long optimizer_steps = 0;
};

StageResult run_stage(CastModel& model, const StageConfig& stage, const Corpus& corpus, std::uint64_t seed,
                      const TrainConfig& cfg = {}, const MetricSink& sink = {});

/// Full-scale step counts and peak learning rates, before scaling.
inline constexpr int kFullScaleSteps[3] = {400000, 200000, 100000};
inline constexpr double kFullScalePeakLr[3] = {7.5e-5, 1.5e-5, 2.5e-5};

struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 42;
  /// Step counts are round(full-scale steps x scale_factor).
  double scale_factor = 0.005;
  /// Peak learning rates are the full-scale values x lr_scale.
  double lr_scale = 40.0;
  /// Stages to run in order; {Base} runs the end-to-end ablation.
  std::vector<Stage> stages = {Stage::One, Stage::Two, Stage::Three};

  StageConfig stage_config(Stage s) const;
  void validate() const;
};

struct PipelineResult {
  CastModel model;
  std::vector<MetricRecord> log;
  std::vector<std::pair<Stage, long>> steps_per_stage;
};

using StageHook = std::function<void(Stage, const CastModel&)>;

/// Builds the model from seed, then runs the configured stages. When
/// `start` is given, training continues from it instead of a fresh model.
PipelineResult run_pipeline(const PipelineConfig& cfg, const Corpus& corpus, const StageHook& on_stage_end = {},
                            const MetricSink& sink = {}, std::optional<CastModel> start = std::nullopt);

}  // namespace cast
