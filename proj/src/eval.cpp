#include "cast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "cast/log.hpp"

namespace cast {

double timbre_similarity(const SpeechEncoder& encoder, const MelGrid& a, const MelGrid& b) {
  const Matrix ea = mean_rows(encoder.encode(a).frames);
  const Matrix eb = mean_rows(encoder.encode(b).frames);
  return cosine_similarity(ea.values(), eb.values());
}

double timbre_similarity(const MelGrid& a, const MelGrid& b) {
  static const SpeechEncoder encoder = SpeechEncoder::make_frozen(DataConfig{}.n_mels, BlockConfig{}.d_timbre);
  return timbre_similarity(encoder, a, b);
}

StyleScore style_accuracy(const MelGrid& generated, const Caption& caption, int n_chars, const DataConfig& cfg) {
  caption.validate();
  const OracleEstimate est = invert_attributes(generated, n_chars, cfg);
  SpeakerParams guess;
  guess.pitch_idx = std::max(est.pitch_idx, 0);
  guess.tilt = std::clamp(est.tilt, -1.0, 1.0);
  guess.rate = std::clamp(est.rate, 0.5, 2.0);
  guess.expressiveness = std::clamp(est.expressiveness, 0.0, 1.0);
  const Caption levels = caption_from_params(guess);

  StyleScore s;
  for (int i = 0; i < kNumAttributes; ++i) {
    const auto k = static_cast<std::size_t>(i);
    s.predicted[k] = levels.levels[k];
    s.correct[k] = std::abs(levels.levels[k] - caption.levels[k]) <= 1;
  }
  const auto pitch = static_cast<std::size_t>(Attribute::Pitch);
  if (est.pitch_idx < 0) {
    s.predicted[pitch] = -1;
    s.correct[pitch] = false;
  }
  return s;
}

EvalSuite suite_from_corpus(Corpus corpus) {
  EvalSuite suite;
  suite.corpus = std::move(corpus);
  const Corpus& c = suite.corpus;
  for (const SpeechPair& p : c.speech) {
    suite.speech.push_back({SpeechPrompt{p.prompt_mel, p.prompt_text}, p.target_text, p.target_mel,
                            c.speakers.at(static_cast<std::size_t>(p.speaker_index))});
  }
  for (const TextPair& p : c.text) {
    suite.text.push_back(
        {p.caption, p.target_text, p.target_mel, c.speakers.at(static_cast<std::size_t>(p.speaker_index))});
  }
  return suite;
}

EvalSuite build_eval_suite(int n_speakers, int n_texts, std::uint64_t seed, const DataConfig& cfg) {
  return suite_from_corpus(build_corpus(n_speakers, n_texts, mix_seed(seed, 0xE7A1), cfg));
}

double recon_mse(const CastModel& model, const Corpus& corpus, Modality modality, std::uint64_t seed) {
  std::vector<BatchItem> items;
  const std::size_t n = modality == Modality::Speech ? corpus.speech.size() : corpus.text.size();
  for (std::size_t i = 0; i < n; ++i) items.push_back({modality, i, false});
  if (items.empty()) return 0.0;
  return batch_loss_and_grads(model, corpus, items, mix_seed(seed, 0x5EC0), nullptr);
}

namespace {

struct Accumulator {
  double sim = 0.0;
  std::array<double, kNumAttributes> style{};
  double pitch = 0.0;
  int n = 0;

  void add(double s, const StyleScore& score, bool pitch_ok) {
    sim += s;
    for (std::size_t k = 0; k < score.correct.size(); ++k) style[k] += score.correct[k];
    pitch += pitch_ok;
    ++n;
  }

  EvalReport report(double mse) const {
    EvalReport r;
    r.n_samples = n;
    r.recon_mse = mse;
    if (n == 0) return r;
    r.timbre_sim = sim / n;
    r.pitch_recovery = pitch / n;
    double macro = 0.0;
    for (std::size_t k = 0; k < style.size(); ++k) {
      r.style_acc[k] = style[k] / n;
      macro += r.style_acc[k];
    }
    r.style_macro = macro / kNumAttributes;
    return r;
  }
};

}  // namespace

EvalResult evaluate(const CastModel& model, const EvalSuite& suite, const SynthOptions& opts) {
  const SpeechEncoder encoder = model.speech_encoder();
  DataConfig dcfg = suite.corpus.config;
  Accumulator speech, text;
  std::uint64_t k = 0;
  for (const SpeechCase& c : suite.speech) {
    SynthesisRequest req{c.target_text, c.prompt, GuidanceScale(opts.w), opts.num_steps, mix_seed(opts.seed, k++)};
    const MelGrid gen = synthesize(model, req, nullptr, dcfg.base_frames);
    const int n_chars = static_cast<int>(c.target_text.size());
    const OracleEstimate est = invert_attributes(gen, n_chars, dcfg);
    speech.add(timbre_similarity(encoder, c.prompt.mel, gen), style_accuracy(gen, caption_from_params(c.speaker), n_chars, dcfg),
               est.pitch_idx == c.speaker.pitch_idx);
  }
  for (const TextCase& c : suite.text) {
    SynthesisRequest req{c.target_text, c.caption, GuidanceScale(opts.w), opts.num_steps, mix_seed(opts.seed, k++)};
    const MelGrid gen = synthesize(model, req, nullptr, dcfg.base_frames);
    const int n_chars = static_cast<int>(c.target_text.size());
    const OracleEstimate est = invert_attributes(gen, n_chars, dcfg);
    text.add(timbre_similarity(encoder, c.reference, gen), style_accuracy(gen, c.caption, n_chars, dcfg),
             est.pitch_idx == c.speaker.pitch_idx);
  }
  EvalResult r;
  r.speech = speech.report(recon_mse(model, suite.corpus, Modality::Speech, opts.seed));
  r.text = text.report(recon_mse(model, suite.corpus, Modality::Text, opts.seed));
  return r;
}

// ------------------------------------------------------------------ ablation

const std::vector<std::string>& AblationTable::columns() {
  static const std::vector<std::string> cols = {
      "variant",          "fusion",          "strategy",           "steps",          "status",
      "speech_timbre_sim", "speech_style_acc", "speech_recon_mse", "text_timbre_sim", "text_style_acc",
      "text_recon_mse"};
  return cols;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::vector<std::vector<std::string>> table_cells(const AblationTable& t) {
  std::vector<std::vector<std::string>> out;
  out.push_back(AblationTable::columns());
  for (const AblationRow& r : t.rows) {
    std::vector<std::string> row = {r.name, r.fusion, r.strategy, std::to_string(r.optimizer_steps),
                                    r.ok ? "ok" : "FAILED: " + r.error};
    if (r.ok) {
      for (const EvalReport* rep : {&r.result.speech, &r.result.text}) {
        row.push_back(fmt(rep->timbre_sim));
        row.push_back(fmt(rep->style_macro));
        row.push_back(fmt(rep->recon_mse));
      }
    } else {
      row.insert(row.end(), 6, "-");
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

std::string AblationTable::to_tsv() const {
  std::ostringstream os;
  for (const auto& row : table_cells(*this)) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "\t" : "") << row[i];
    os << '\n';
  }
  return os.str();
}

std::string AblationTable::to_aligned() const {
  const auto cells = table_cells(*this);
  std::vector<std::size_t> width(columns().size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      line += row[i];
      if (i + 1 < row.size()) line.append(width[i] - row[i].size(), ' ');
    }
    os << line << '\n';
  }
  return os.str();
}

AblationTable run_ablation(const std::vector<AblationVariant>& variants, const Corpus& corpus,
                           const PipelineConfig& base, const EvalSuite& suite, const SynthOptions& opts) {
  if (variants.size() < 2) throw std::invalid_argument("run_ablation: need at least two variants");
  AblationTable table;
  for (const AblationVariant& v : variants) {
    AblationRow row;
    row.name = v.name;
    row.fusion = to_string(v.block.fusion);
    row.strategy = v.stages.size() == 1 && v.stages[0] == Stage::Base ? "end-to-end" : "multi-stage";
    try {
      PipelineConfig cfg = base;
      cfg.model.block = v.block;
      cfg.stages = v.stages;
      for (Stage s : cfg.stages) row.optimizer_steps += cfg.stage_config(s).steps;
      if (v.pretrained) {
        if (!(v.pretrained->config().block == v.block))
          throw std::invalid_argument("pretrained model does not match the variant's block config");
        row.result = evaluate(*v.pretrained, suite, opts);
      } else {
        log::info("ablation: training " + v.name);
        const PipelineResult trained = run_pipeline(cfg, corpus);
        long steps = 0;
        for (const auto& [stage, n] : trained.steps_per_stage) steps += n;
        row.optimizer_steps = steps;
        row.result = evaluate(trained.model, suite, opts);
      }
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      log::error("ablation variant " + v.name + " failed: " + e.what());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace cast
