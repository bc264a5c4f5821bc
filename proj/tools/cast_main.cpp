#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cast/checkpoint.hpp"
#include "cast/config.hpp"
#include "cast/data.hpp"
#include "cast/eval.hpp"
#include "cast/inference.hpp"
#include "cast/log.hpp"
#include "cast/trainer.hpp"

namespace fs = std::filesystem;
using namespace cast;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> scale_factor;
  std::optional<double> cfg_scale;
  std::optional<int> steps;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool training_flags, bool synth_flags) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Run seed (overrides the config)");
  if (training_flags) cmd->add_option("--scale-factor", c.scale_factor, "Fraction of the full-scale step counts");
  if (synth_flags) {
    cmd->add_option("--cfg-scale", c.cfg_scale, "Classifier-free guidance scale (default 3.0)");
    cmd->add_option("--steps", c.steps, "Euler steps (default 32)");
  }
  cmd->add_option("--out", c.out, "Output path")->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) cfg.pipeline.seed = *c.seed;
  if (c.scale_factor) cfg.pipeline.scale_factor = *c.scale_factor;
  if (c.cfg_scale) cfg.eval.synth.w = *c.cfg_scale;
  if (c.steps) cfg.eval.synth.num_steps = *c.steps;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string provenance_of(const std::vector<Stage>& stages, const std::string& prior) {
  std::string p = prior;
  for (Stage s : stages) p += (p.empty() ? "" : ",") + std::string(to_string(s));
  return p;
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json style;
  for (int i = 0; i < kNumAttributes; ++i) style[kAttributeNames[static_cast<std::size_t>(i)]] = r.style_acc[static_cast<std::size_t>(i)];
  return {{"timbre_sim", r.timbre_sim}, {"style_acc", style},         {"style_macro", r.style_macro},
          {"pitch_recovery", r.pitch_recovery}, {"recon_mse", r.recon_mse}, {"n_samples", r.n_samples}};
}

int cmd_gen_data(const Common& c) {
  const RunConfig cfg = resolve(c);
  const Corpus corpus = build_corpus(cfg.corpus.n_speakers, cfg.corpus.n_texts, corpus_seed(cfg), cfg.corpus.data);
  save_corpus(corpus, c.out);
  log::info("wrote " + std::to_string(corpus.speech.size()) + " speech pairs and " + std::to_string(corpus.text.size()) +
            " text pairs to " + c.out);
  return 0;
}

int cmd_train(const Common& c, const std::string& corpus_path, const std::string& stage_arg,
              const std::string& init_ckpt) {
  RunConfig cfg = resolve(c);
  const Corpus corpus = load_corpus(corpus_path);
  std::vector<Stage> stages;
  if (stage_arg == "all") stages = {Stage::One, Stage::Two, Stage::Three};
  else stages = {parse_stage(stage_arg)};
  cfg.pipeline.stages = stages;

  std::optional<CastModel> start;
  std::string prior;
  if (!init_ckpt.empty()) {
    Checkpoint ck = load_checkpoint(init_ckpt);
    prior = ck.provenance;
    if (!(ck.config == cfg.pipeline.model))
      throw std::invalid_argument("checkpoint " + init_ckpt + " was trained with a different model config");
    start = model_from_checkpoint(ck);
  } else if (stages.front() == Stage::Two || stages.front() == Stage::Three) {
    throw std::invalid_argument("stage " + std::string(to_string(stages.front())) +
                                " continues from an earlier stage; pass --checkpoint");
  }

  fs::create_directories(c.out);
  std::ofstream metrics(fs::path(c.out) / "metrics.jsonl", std::ios::binary);
  std::string done = prior;
  const auto hook = [&](Stage s, const CastModel& m) {
    done = provenance_of({s}, done);
    const fs::path path = fs::path(c.out) / ("stage" + std::string(to_string(s)) + ".ckpt");
    save_checkpoint(make_checkpoint(m, done, cfg.seed()), path.string());
    log::info("wrote " + path.string());
  };
  const auto sink = [&](const MetricRecord& r) { metrics << r.to_json_line() << '\n'; };
  const PipelineResult res = run_pipeline(cfg.pipeline, corpus, hook, sink, std::move(start));
  save_checkpoint(make_checkpoint(res.model, done, cfg.seed()), (fs::path(c.out) / "final.ckpt").string());
  write_text(fs::path(c.out) / "config.json", run_config_to_json(cfg).dump(2) + "\n");
  return 0;
}

struct SynthFlags {
  std::string checkpoint;
  std::string text;
  std::string prompt_mel;
  std::string ref_text;
  std::string caption;
  std::string corpus;
  int pair = -1;
};

int cmd_synth(const Common& c, const SynthFlags& f) {
  const RunConfig cfg = resolve(c);
  const CastModel model = model_from_checkpoint(load_checkpoint(f.checkpoint));
  SynthesisRequest req;
  req.target_text = f.text;
  req.guidance = GuidanceScale(cfg.eval.synth.w);
  req.num_steps = cfg.eval.synth.num_steps;
  req.seed = cfg.seed();
  const int sources = !f.prompt_mel.empty() + !f.caption.empty() + !f.corpus.empty();
  if (sources != 1) throw std::invalid_argument("give exactly one of --prompt-mel, --caption or --corpus/--pair");
  if (!f.prompt_mel.empty()) {
    if (f.ref_text.empty()) throw std::invalid_argument("--prompt-mel needs --ref-text");
    req.prompt = SpeechPrompt{read_mel(f.prompt_mel), f.ref_text};
  } else if (!f.caption.empty()) {
    req.prompt = Caption::parse(f.caption);
  } else {
    const Corpus corpus = load_corpus(f.corpus);
    if (f.pair < 0 || static_cast<std::size_t>(f.pair) >= corpus.speech.size())
      throw std::invalid_argument("--pair must index one of the corpus's " + std::to_string(corpus.speech.size()) +
                                  " speech pairs");
    const SpeechPair& p = corpus.speech[static_cast<std::size_t>(f.pair)];
    req.prompt = SpeechPrompt{p.prompt_mel, p.prompt_text};
    if (req.target_text.empty()) req.target_text = p.target_text;
  }
  const MelGrid mel = synthesize(model, req);
  write_mel(c.out, mel, req);
  log::info("wrote " + std::to_string(mel.rows()) + " frames to " + c.out);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& corpus_path) {
  const RunConfig cfg = resolve(c);
  const CastModel model = model_from_checkpoint(load_checkpoint(checkpoint));
  EvalSuite suite;
  if (!corpus_path.empty()) {
    suite = suite_from_corpus(load_corpus(corpus_path));
  } else {
    suite = build_eval_suite(cfg.eval.n_speakers, cfg.eval.n_texts, eval_seed(cfg), cfg.corpus.data);
  }
  SynthOptions opts = cfg.eval.synth;
  opts.seed = cfg.seed();
  const EvalResult r = evaluate(model, suite, opts);
  const nlohmann::json j = {{"speech", report_json(r.speech)}, {"text", report_json(r.text)}};
  write_text(c.out, j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_ablate(const Common& c, const std::string& corpus_path) {
  const RunConfig cfg = resolve(c);
  const Corpus corpus = load_corpus(corpus_path);
  const EvalSuite suite = build_eval_suite(cfg.eval.n_speakers, cfg.eval.n_texts, eval_seed(cfg), cfg.corpus.data);
  BlockConfig ca = cfg.pipeline.model.block;
  ca.fusion = Fusion::CA;
  BlockConfig sa = ca;
  sa.fusion = Fusion::SA;
  const std::vector<AblationVariant> variants = {
      {"CAST-CA", ca, {Stage::One, Stage::Two, Stage::Three}, nullptr},
      {"CAST-CA-BASE", ca, {Stage::Base}, nullptr},
      {"CAST-SA-BASE", sa, {Stage::Base}, nullptr},
  };
  SynthOptions opts = cfg.eval.synth;
  opts.seed = cfg.seed();
  const AblationTable t = run_ablation(variants, corpus, cfg.pipeline, suite, opts);
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "ablation.tsv", t.to_tsv());
  write_text(fs::path(c.out) / "ablation.txt", t.to_aligned());
  std::cout << t.to_aligned();
  for (const AblationRow& r : t.rows)
    if (!r.ok) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  log::init_from_env();
  CLI::App app{"Toy flow-matching TTS with unified speech/text timbre prompts"};
  app.require_subcommand(1);

  Common gen_c, train_c, synth_c, eval_c, ablate_c;
  std::string train_corpus, stage = "all", init_ckpt, eval_ckpt, eval_corpus, ablate_corpus;
  SynthFlags sf;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic training corpus");
  add_common(gen, gen_c, false, false);

  auto* train = app.add_subcommand("train", "Run training stages and write checkpoints");
  add_common(train, train_c, true, false);
  train->add_option("--corpus", train_corpus, "Corpus file from gen-data")->required()->check(CLI::ExistingFile);
  train->add_option("--stage", stage, "1, 2, 3, base or all")->check(CLI::IsMember({"1", "2", "3", "base", "all"}));
  train->add_option("--checkpoint", init_ckpt, "Checkpoint to continue from")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Synthesize a mel grid from a speech or caption prompt");
  add_common(synth, synth_c, false, true);
  synth->add_option("--checkpoint", sf.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  synth->add_option("--text", sf.text, "Target transcription");
  synth->add_option("--prompt-mel", sf.prompt_mel, "Speech prompt mel file")->check(CLI::ExistingFile);
  synth->add_option("--ref-text", sf.ref_text, "Transcription of the speech prompt");
  synth->add_option("--caption", sf.caption, "Caption, e.g. gender=1,pitch=0,rate=1,expressiveness=2");
  synth->add_option("--corpus", sf.corpus, "Take the speech prompt from this corpus")->check(CLI::ExistingFile);
  synth->add_option("--pair", sf.pair, "Speech pair index within --corpus");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on held-out requests");
  add_common(eval, eval_c, false, true);
  eval->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", eval_corpus, "Evaluate on this corpus instead of a fresh held-out suite")
      ->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "Train and compare fusion variants and training strategies");
  add_common(ablate, ablate_c, true, true);
  ablate->add_option("--corpus", ablate_corpus, "Corpus file from gen-data")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_c);
    if (train->parsed()) return cmd_train(train_c, train_corpus, stage, init_ckpt);
    if (synth->parsed()) {
      if (sf.text.empty() && sf.corpus.empty()) throw std::invalid_argument("--text is required");
      return cmd_synth(synth_c, sf);
    }
    if (eval->parsed()) return cmd_eval(eval_c, eval_ckpt, eval_corpus);
    if (ablate->parsed()) return cmd_ablate(ablate_c, ablate_corpus);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cast: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
