#include "cast/config.hpp"

#include <fstream>
#include <initializer_list>
#include <stdexcept>

namespace cast {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const char* section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw std::invalid_argument(std::string("config section '") + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw std::invalid_argument(std::string("unknown config key '") + section + "." + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json data_to_json(const DataConfig& d) {
  return {{"n_mels", d.n_mels},
          {"base_frames", d.base_frames},
          {"noise_std", d.noise_std},
          {"tilt_gain", d.tilt_gain},
          {"modulation_depth", d.modulation_depth},
          {"modulation_period", d.modulation_period},
          {"bump_width", d.bump_width},
          {"secondary_gain", d.secondary_gain},
          {"min_words", d.min_words},
          {"max_words", d.max_words},
          {"min_word_len", d.min_word_len},
          {"max_word_len", d.max_word_len}};
}

DataConfig data_from_json(const json& j) {
  reject_unknown(j, "corpus.data",
                 {"n_mels", "base_frames", "noise_std", "tilt_gain", "modulation_depth", "modulation_period",
                  "bump_width", "secondary_gain", "min_words", "max_words", "min_word_len", "max_word_len"});
  DataConfig d;
  read(j, "n_mels", d.n_mels);
  read(j, "base_frames", d.base_frames);
  read(j, "noise_std", d.noise_std);
  read(j, "tilt_gain", d.tilt_gain);
  read(j, "modulation_depth", d.modulation_depth);
  read(j, "modulation_period", d.modulation_period);
  read(j, "bump_width", d.bump_width);
  read(j, "secondary_gain", d.secondary_gain);
  read(j, "min_words", d.min_words);
  read(j, "max_words", d.max_words);
  read(j, "min_word_len", d.min_word_len);
  read(j, "max_word_len", d.max_word_len);
  return d;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.block.n_layers},
          {"n_heads", c.block.n_heads},
          {"d_model", c.block.d_model},
          {"d_timbre", c.block.d_timbre},
          {"fusion", to_string(c.block.fusion)},
          {"n_mels", c.n_mels},
          {"text_dim", c.text_dim},
          {"n_conv", c.n_conv},
          {"conv_kernel", c.conv_kernel},
          {"conv_expand", c.conv_expand},
          {"ff_mult", c.ff_mult},
          {"step_features", c.step_features},
          {"chunk_size", c.chunk_size}};
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j, "model",
                 {"n_layers", "n_heads", "d_model", "d_timbre", "fusion", "n_mels", "text_dim", "n_conv", "conv_kernel",
                  "conv_expand", "ff_mult", "step_features", "chunk_size"});
  ModelConfig c;
  read(j, "n_layers", c.block.n_layers);
  read(j, "n_heads", c.block.n_heads);
  read(j, "d_model", c.block.d_model);
  read(j, "d_timbre", c.block.d_timbre);
  if (j.contains("fusion")) c.block.fusion = parse_fusion(j.at("fusion").get<std::string>());
  read(j, "n_mels", c.n_mels);
  read(j, "text_dim", c.text_dim);
  read(j, "n_conv", c.n_conv);
  read(j, "conv_kernel", c.conv_kernel);
  read(j, "conv_expand", c.conv_expand);
  read(j, "ff_mult", c.ff_mult);
  read(j, "step_features", c.step_features);
  read(j, "chunk_size", c.chunk_size);
  return c;
}

json run_config_to_json(const RunConfig& cfg) {
  const PipelineConfig& p = cfg.pipeline;
  const TrainConfig& t = p.train;
  json stages = json::array();
  for (Stage s : p.stages) stages.push_back(to_string(s));
  return {{"seed", p.seed},
          {"model", model_config_to_json(p.model)},
          {"train",
           {{"batch_size", t.batch_size},
            {"warmup_frac", t.warmup_frac},
            {"weight_decay", t.weight_decay},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"eps", t.eps},
            {"p_drop", t.p_drop},
            {"log_interval", t.log_interval}}},
          {"pipeline", {{"scale_factor", p.scale_factor}, {"lr_scale", p.lr_scale}, {"stages", stages}}},
          {"corpus",
           {{"n_speakers", cfg.corpus.n_speakers},
            {"n_texts", cfg.corpus.n_texts},
            {"data", data_to_json(cfg.corpus.data)}}},
          {"eval",
           {{"n_speakers", cfg.eval.n_speakers},
            {"n_texts", cfg.eval.n_texts},
            {"cfg_scale", cfg.eval.synth.w},
            {"ode_steps", cfg.eval.synth.num_steps}}}};
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, "<root>", {"seed", "model", "train", "pipeline", "corpus", "eval"});
  RunConfig cfg;
  PipelineConfig& p = cfg.pipeline;
  read(j, "seed", p.seed);
  if (j.contains("model")) p.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, "train",
                   {"batch_size", "warmup_frac", "weight_decay", "beta1", "beta2", "eps", "p_drop", "log_interval"});
    read(t, "batch_size", p.train.batch_size);
    read(t, "warmup_frac", p.train.warmup_frac);
    read(t, "weight_decay", p.train.weight_decay);
    read(t, "beta1", p.train.beta1);
    read(t, "beta2", p.train.beta2);
    read(t, "eps", p.train.eps);
    read(t, "p_drop", p.train.p_drop);
    read(t, "log_interval", p.train.log_interval);
  }
  if (j.contains("pipeline")) {
    const json& pj = j.at("pipeline");
    reject_unknown(pj, "pipeline", {"scale_factor", "lr_scale", "stages"});
    read(pj, "scale_factor", p.scale_factor);
    read(pj, "lr_scale", p.lr_scale);
    if (pj.contains("stages")) {
      p.stages.clear();
      for (const auto& s : pj.at("stages")) p.stages.push_back(parse_stage(s.get<std::string>()));
    }
  }
  if (j.contains("corpus")) {
    const json& c = j.at("corpus");
    reject_unknown(c, "corpus", {"n_speakers", "n_texts", "data"});
    read(c, "n_speakers", cfg.corpus.n_speakers);
    read(c, "n_texts", cfg.corpus.n_texts);
    if (c.contains("data")) cfg.corpus.data = data_from_json(c.at("data"));
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, "eval", {"n_speakers", "n_texts", "cfg_scale", "ode_steps"});
    read(e, "n_speakers", cfg.eval.n_speakers);
    read(e, "n_texts", cfg.eval.n_texts);
    read(e, "cfg_scale", cfg.eval.synth.w);
    read(e, "ode_steps", cfg.eval.synth.num_steps);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  auto collect = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      errors.emplace_back(e.what());
    }
  };
  collect([&] { pipeline.model.validate(); });
  collect([&] { pipeline.train.validate(); });
  collect([&] { corpus.data.validate(); });
  if (!(pipeline.scale_factor > 0.0)) errors.emplace_back("pipeline.scale_factor must be > 0");
  if (!(pipeline.lr_scale > 0.0)) errors.emplace_back("pipeline.lr_scale must be > 0");
  if (pipeline.stages.empty()) errors.emplace_back("pipeline.stages must be nonempty");
  if (corpus.n_speakers < 1) errors.emplace_back("corpus.n_speakers must be >= 1");
  if (corpus.n_texts < 1) errors.emplace_back("corpus.n_texts must be >= 1");
  if (corpus.data.n_mels != pipeline.model.n_mels) errors.emplace_back("corpus.data.n_mels must equal model.n_mels");
  if (eval.n_speakers < 1) errors.emplace_back("eval.n_speakers must be >= 1");
  if (eval.n_texts < 1) errors.emplace_back("eval.n_texts must be >= 1");
  if (!(eval.synth.w >= 0.0)) errors.emplace_back("eval.cfg_scale must be >= 0");
  if (eval.synth.num_steps < 1) errors.emplace_back("eval.ode_steps must be >= 1");
  if (errors.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : errors) msg += "\n" + e;
  throw std::invalid_argument(msg);
}

std::uint64_t corpus_seed(const RunConfig& cfg) { return mix_seed(cfg.seed(), 0xC0); }
std::uint64_t eval_seed(const RunConfig& cfg) { return mix_seed(cfg.seed(), 0xE0); }

}  // namespace cast
