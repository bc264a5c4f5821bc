#include "cast/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "cast/flow.hpp"
#include "cast/log.hpp"

namespace cast {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Base: return "base";
    case Stage::One: return "1";
    case Stage::Two: return "2";
    case Stage::Three: return "3";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  if (name == "1") return Stage::One;
  if (name == "2") return Stage::Two;
  if (name == "3") return Stage::Three;
  if (name == "base" || name == "BASE") return Stage::Base;
  throw std::invalid_argument("unknown stage '" + std::string(name) + "' (expected 1, 2, 3 or base)");
}

const char* to_string(DatasetMix m) {
  switch (m) {
    case DatasetMix::SpeechOnly: return "speech_only";
    case DatasetMix::TextOnly: return "text_only";
    case DatasetMix::Combined: return "combined";
  }
  return "?";
}

bool is_encoder_param(const std::string& name) {
  return name.starts_with("speech_enc.") || name.starts_with("text_enc.");
}

bool is_projector_param(const std::string& name) { return name.starts_with("projector."); }

StageConfig StageConfig::make(Stage stage, int steps, double peak_lr) {
  StageConfig s;
  s.stage = stage;
  s.steps = steps;
  s.peak_lr = peak_lr;
  switch (stage) {
    case Stage::One:
      s.mix = DatasetMix::SpeechOnly;
      s.trainable = [](const std::string& n) { return !is_encoder_param(n) && !is_projector_param(n); };
      break;
    case Stage::Two:
      s.mix = DatasetMix::TextOnly;
      s.trainable = [](const std::string& n) { return is_projector_param(n); };
      break;
    case Stage::Three:
    case Stage::Base:
      s.mix = DatasetMix::Combined;
      s.trainable = [](const std::string& n) { return !is_encoder_param(n); };
      break;
  }
  return s;
}

void TrainConfig::validate() const {
  std::vector<std::string> errors;
  if (batch_size < 1) errors.emplace_back("train.batch_size must be >= 1");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) errors.emplace_back("train.warmup_frac must be in [0, 1)");
  if (!(weight_decay >= 0.0)) errors.emplace_back("train.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) errors.emplace_back("train.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) errors.emplace_back("train.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) errors.emplace_back("train.eps must be > 0");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) errors.emplace_back("train.p_drop must be in [0, 1)");
  if (log_interval < 1) errors.emplace_back("train.log_interval must be >= 1");
  if (errors.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw std::invalid_argument(msg);
}

double lr_at(int step, const StageConfig& stage, double warmup_frac) {
  if (step < 0 || step > stage.steps)
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(stage.steps) +
                                "]");
  const double warmup = warmup_frac * stage.steps;
  if (step < warmup) return stage.peak_lr * step / warmup;
  if (stage.steps == warmup) return stage.peak_lr;
  return stage.peak_lr * (stage.steps - step) / (stage.steps - warmup);
}

OptState OptState::for_params(const ParamStore& params) {
  OptState s;
  for (const Param& p : params) {
    if (p.trainable) {
      s.m.emplace_back(p.value.rows(), p.value.cols());
      s.v.emplace_back(p.value.rows(), p.value.cols());
    } else {
      s.m.emplace_back();
      s.v.emplace_back();
    }
  }
  return s;
}

void apply_update(ParamStore& params, std::span<const Matrix> grads, OptState& opt, double lr,
                  const TrainConfig& cfg) {
  if (grads.size() != params.size() || opt.m.size() != params.size())
    throw std::logic_error("apply_update: gradient/state count differs from parameter count");
  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (!p.trainable) continue;
    const Matrix& g = grads[i];
    if (!g.same_shape(p.value) || !opt.m[i].same_shape(p.value))
      throw std::logic_error("apply_update: shape mismatch for " + p.name);
    Matrix& m = opt.m[i];
    Matrix& v = opt.v[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p.value[k] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.value[k]);
    }
  }
}

int drop_conditions(std::vector<BatchItem>& batch, double p_drop, Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw std::invalid_argument("drop_conditions: p_drop must be in [0, 1)");
  int dropped = 0;
  for (BatchItem& item : batch) {
    item.cfg_drop = p_drop > 0.0 && rng.bernoulli(p_drop);
    dropped += item.cfg_drop;
  }
  return dropped;
}

std::string MetricRecord::to_json_line() const {
  std::ostringstream os;
  os << std::setprecision(9) << "{\"step\":" << step << ",\"stage\":\"" << to_string(stage) << "\",\"loss\":" << loss
     << ",\"lr\":" << lr << "}";
  return os.str();
}

double batch_loss_and_grads(const CastModel& model, const Corpus& corpus, std::span<const BatchItem> batch,
                            std::uint64_t noise_seed, std::vector<Matrix>* grads) {
  long total_frames = 0;
  for (const BatchItem& item : batch) {
    const MelGrid& x0 =
        item.modality == Modality::Speech ? corpus.speech.at(item.index).target_mel : corpus.text.at(item.index).target_mel;
    total_frames += x0.rows();
  }
  if (total_frames == 0) throw std::invalid_argument("batch has no frames");

  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const BatchItem& item = batch[b];
    const bool speech = item.modality == Modality::Speech;
    const MelGrid& x0 = speech ? corpus.speech[item.index].target_mel : corpus.text[item.index].target_mel;
    const CharSeq& chars = speech ? corpus.speech[item.index].target_chars : corpus.text[item.index].target_chars;

    Rng rng(mix_seed(noise_seed, b));
    const FlowStep tau(rng.uniform());
    MelGrid x1(x0.rows(), x0.cols());
    for (double& v : x1.values()) v = rng.normal();
    const MelGrid xt = interpolate(x0, x1, tau);
    const MelGrid target = target_velocity(x0, x1);

    ag::Tape tape(grads != nullptr);
    ag::Var cond;
    std::optional<TimbreVar> timbre;
    if (!item.cfg_drop) {
      cond = model.cond_graph(tape, chars, x0.rows());
      timbre = speech ? model.speech_timbre_graph(tape, corpus.speech[item.index].prompt_mel)
                      : model.text_timbre_graph(tape, corpus.text[item.index].caption);
    }
    const ag::Var v = model.velocity_graph(tape, tape.constant(xt), cond, timbre, tau, item.cfg_drop);
    const double weight = static_cast<double>(x0.rows()) / static_cast<double>(total_frames);
    const ag::Var l =
        ag::scale(ag::masked_mse(v, target, std::vector<bool>(static_cast<std::size_t>(x0.rows()), true)), weight);
    loss += ag::scalar(l);
    if (grads) {
      tape.backward(l);
      tape.accumulate_param_grads(*grads);
    }
  }
  return loss;
}

StageResult run_stage(CastModel& model, const StageConfig& stage, const Corpus& corpus, std::uint64_t seed,
                      const TrainConfig& cfg, const MetricSink& sink) {
  cfg.validate();
  if (stage.steps < 1) throw std::invalid_argument("run_stage: steps must be >= 1");
  if (!(stage.peak_lr > 0.0)) throw std::invalid_argument("run_stage: peak_lr must be > 0");

  std::vector<BatchItem> pool;
  if (stage.mix != DatasetMix::TextOnly)
    for (std::size_t i = 0; i < corpus.speech.size(); ++i) pool.push_back({Modality::Speech, i, false});
  if (stage.mix != DatasetMix::SpeechOnly)
    for (std::size_t i = 0; i < corpus.text.size(); ++i) pool.push_back({Modality::Text, i, false});
  if (pool.empty())
    throw std::invalid_argument(std::string("run_stage: corpus has no pairs for the ") + to_string(stage.mix) + " mix");

  ParamStore& params = model.params();
  params.set_trainable(stage.trainable);
  OptState opt = OptState::for_params(params);
  const std::uint64_t stage_seed = mix_seed(seed, 100 + static_cast<std::uint64_t>(stage.stage));
  Rng batch_rng(stage_seed);

  StageResult result;
  double window_loss = 0.0;
  int window = 0;
  std::vector<Matrix> grads = params.zeros_like();
  for (int step = 0; step < stage.steps; ++step) {
    std::vector<BatchItem> batch;
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(pool[static_cast<std::size_t>(batch_rng.below(pool.size()))]);
    drop_conditions(batch, cfg.p_drop, batch_rng);

    for (Matrix& g : grads) g.fill(0.0);
    const double loss = batch_loss_and_grads(model, corpus, batch, mix_seed(stage_seed, 1000000 + step), &grads);
    const double lr = lr_at(step + 1, stage, cfg.warmup_frac);
    apply_update(params, grads, opt, lr, cfg);
    for (Param& p : params)
      if (p.trainable) round_to_float(p.value);

    window_loss += loss;
    ++window;
    if ((step + 1) % cfg.log_interval == 0 || step + 1 == stage.steps) {
      MetricRecord rec{step + 1, stage.stage, window_loss / window, lr};
      result.log.push_back(rec);
      if (sink) sink(rec);
      log::debug("stage " + std::string(to_string(stage.stage)) + " step " + std::to_string(step + 1) + " loss " +
                 std::to_string(rec.loss));
      window_loss = 0.0;
      window = 0;
    }
  }
  result.optimizer_steps = opt.step;
  // Leave the model in the canonical "all non-encoder parameters trainable" state.
  params.set_trainable([](const std::string& n) { return !is_encoder_param(n); });
  return result;
}

StageConfig PipelineConfig::stage_config(Stage s) const {
  if (s == Stage::Base) {
    int steps = 0;
    for (int k = 0; k < 3; ++k) steps += static_cast<int>(std::lround(kFullScaleSteps[k] * scale_factor));
    return StageConfig::make(Stage::Base, std::max(steps, 1), kFullScalePeakLr[0] * lr_scale);
  }
  const int k = static_cast<int>(s) - 1;
  const int steps = std::max(1, static_cast<int>(std::lround(kFullScaleSteps[k] * scale_factor)));
  return StageConfig::make(s, steps, kFullScalePeakLr[k] * lr_scale);
}

void PipelineConfig::validate() const {
  std::vector<std::string> errors;
  auto collect = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      errors.emplace_back(e.what());
    }
  };
  collect([&] { model.validate(); });
  collect([&] { train.validate(); });
  if (!(scale_factor > 0.0)) errors.emplace_back("scale_factor must be > 0");
  if (!(lr_scale > 0.0)) errors.emplace_back("lr_scale must be > 0");
  if (stages.empty()) errors.emplace_back("stages must be nonempty");
  if (errors.empty()) return;
  std::string msg = "invalid pipeline config:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw std::invalid_argument(msg);
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const Corpus& corpus, const StageHook& on_stage_end,
                            const MetricSink& sink, std::optional<CastModel> start) {
  cfg.validate();
  PipelineResult out{start ? std::move(*start) : CastModel(cfg.model, cfg.seed), {}, {}};
  for (Stage s : cfg.stages) {
    const StageConfig sc = cfg.stage_config(s);
    log::info("stage " + std::string(to_string(s)) + ": " + std::to_string(sc.steps) + " steps, peak lr " +
              std::to_string(sc.peak_lr) + ", " + to_string(sc.mix));
    StageResult r = run_stage(out.model, sc, corpus, cfg.seed, cfg.train, sink);
    out.log.insert(out.log.end(), r.log.begin(), r.log.end());
    out.steps_per_stage.emplace_back(s, r.optimizer_steps);
    if (on_stage_end) on_stage_end(s, out.model);
  }
  return out;
}

}  // namespace cast
