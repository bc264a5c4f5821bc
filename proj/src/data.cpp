#include "cast/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "cast/binio.hpp"

namespace cast {

namespace {

constexpr int kFormantSlots = 5;

struct Template {
  int primary;
  int secondary;
};

// Letter i -> primary slot i / 4, secondary one of the remaining four.
Template letter_template(int token) {
  const int li = token - 2;
  const int primary = li / 4;
  int secondary = li % 4;
  if (secondary >= primary) ++secondary;
  return {kFirstFormantBin + kFormantSpacing * primary, kFirstFormantBin + kFormantSpacing * secondary};
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void validate_text(std::string_view text) {
  if (text.empty()) throw std::invalid_argument("text must be nonempty");
  for (char c : text)
    if (!vocab::is_valid_char(c)) throw std::invalid_argument(std::string("character '") + c + "' outside the toy alphabet");
}

}  // namespace

void SpeakerParams::validate() const {
  if (pitch_idx < 0 || pitch_idx >= kPitchLevels) throw std::invalid_argument("pitch_idx out of range");
  if (!(tilt >= -1.0 && tilt <= 1.0)) throw std::invalid_argument("tilt out of range");
  if (!(rate >= 0.5 && rate <= 2.0)) throw std::invalid_argument("rate out of range");
  if (!(expressiveness >= 0.0 && expressiveness <= 1.0)) throw std::invalid_argument("expressiveness out of range");
}

void DataConfig::validate() const {
  if (n_mels < kFirstFormantBin + kFormantSpacing * (kFormantSlots - 1) + kPitchLevels)
    throw std::invalid_argument("n_mels too small for the formant layout");
  if (base_frames < 1) throw std::invalid_argument("base_frames must be >= 1");
  if (noise_std < 0) throw std::invalid_argument("noise_std must be >= 0");
  if (modulation_period < 1) throw std::invalid_argument("modulation_period must be >= 1");
  if (min_words < 1 || max_words < min_words) throw std::invalid_argument("word count range");
  if (min_word_len < 1 || max_word_len < min_word_len) throw std::invalid_argument("word length range");
}

int frames_per_char(double rate, int base_frames) {
  return std::max(1, static_cast<int>(std::lround(base_frames / rate)));
}

Utterance gen_utterance(const SpeakerParams& speaker, std::string_view text, std::uint64_t seed,
                        const DataConfig& cfg) {
  speaker.validate();
  cfg.validate();
  validate_text(text);

  Utterance u;
  u.text = std::string(text);
  u.chars = tokenize(text);
  u.speaker = speaker;
  u.frames_per_char = frames_per_char(speaker.rate, cfg.base_frames);
  const int n_chars = u.chars.size();
  const int frames = n_chars * u.frames_per_char;
  const double center = 0.5 * (cfg.n_mels - 1);
  const double shift = speaker.pitch_idx;
  const double inv_two_var = 1.0 / (2.0 * cfg.bump_width * cfg.bump_width);

  Rng rng(seed);
  u.mel = MelGrid(frames, cfg.n_mels);
  for (int t = 0; t < frames; ++t) {
    const int token = u.chars.tokens[static_cast<std::size_t>(t / u.frames_per_char)];
    const double amp =
        1.0 + cfg.modulation_depth * speaker.expressiveness *
                  std::sin(2.0 * std::numbers::pi * t / cfg.modulation_period);
    for (int b = 0; b < cfg.n_mels; ++b) {
      double v = cfg.tilt_gain * speaker.tilt * (b - center) / center;
      if (token != vocab::kSpace) {
        const Template tpl = letter_template(token);
        const double dp = b - (tpl.primary + shift);
        const double ds = b - (tpl.secondary + shift);
        v += amp * (std::exp(-dp * dp * inv_two_var) + cfg.secondary_gain * std::exp(-ds * ds * inv_two_var));
      }
      v += cfg.noise_std * rng.normal();
      u.mel(t, b) = round_f32(v);
    }
  }
  for (int i = 1; i < n_chars; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    if (u.text[k - 1] == ' ' && u.text[k] != ' ') u.word_bounds.push_back(i * u.frames_per_char);
  }
  return u;
}

SpeechPair split_prompt_target(const Utterance& u, Rng& rng) {
  if (u.word_bounds.empty()) throw SkipError("utterance '" + u.text + "' has a single word; no split exists");
  const int bound = u.word_bounds[static_cast<std::size_t>(rng.below(u.word_bounds.size()))];
  const int char_index = bound / u.frames_per_char;
  SpeechPair p;
  p.prompt_mel = slice_rows(u.mel, 0, bound);
  p.target_mel = slice_rows(u.mel, bound, u.mel.rows() - bound);
  p.prompt_text = u.text.substr(0, static_cast<std::size_t>(char_index));
  p.target_text = u.text.substr(static_cast<std::size_t>(char_index));
  p.target_chars = tokenize(p.target_text);
  return p;
}

Caption caption_from_params(const SpeakerParams& speaker) {
  speaker.validate();
  auto three_way = [](double v, double lo, double hi) { return v < lo ? 0 : (v > hi ? 2 : 1); };
  Caption c;
  c.levels[static_cast<std::size_t>(Attribute::Gender)] = three_way(speaker.tilt, -1.0 / 3.0, 1.0 / 3.0);
  c.levels[static_cast<std::size_t>(Attribute::Pitch)] = speaker.pitch_idx;
  c.levels[static_cast<std::size_t>(Attribute::Rate)] = three_way(speaker.rate, 0.8, 1.25);
  c.levels[static_cast<std::size_t>(Attribute::Expressiveness)] = three_way(speaker.expressiveness, 0.33, 0.66);
  return c;
}

SpeakerParams sample_speaker(Rng& rng) {
  // Speaking rates cluster inside each caption band rather than spanning
  // the full [0.5, 2.0] range.
  static constexpr std::array<std::array<double, 2>, 3> kRateBands = {{{0.55, 0.78}, {0.9, 1.12}, {1.3, 1.55}}};
  SpeakerParams s;
  s.pitch_idx = rng.uniform_int(0, kPitchLevels - 1);
  s.tilt = round_f32(rng.uniform(-1.0, 1.0));
  const auto& band = kRateBands[static_cast<std::size_t>(rng.below(3))];
  s.rate = round_f32(rng.uniform(band[0], band[1]));
  s.expressiveness = round_f32(rng.uniform());
  return s;
}

std::string sample_text(Rng& rng, const DataConfig& cfg) {
  const int words = rng.uniform_int(cfg.min_words, cfg.max_words);
  std::string out;
  for (int w = 0; w < words; ++w) {
    if (w) out.push_back(' ');
    const int len = rng.uniform_int(cfg.min_word_len, cfg.max_word_len);
    for (int i = 0; i < len; ++i) out.push_back(static_cast<char>(vocab::kFirstLetter + rng.below(vocab::kLetters)));
  }
  return out;
}

Corpus build_corpus(int n_speakers, int n_texts, std::uint64_t seed, const DataConfig& cfg) {
  if (n_speakers < 1 || n_texts < 1) throw std::invalid_argument("build_corpus: counts must be >= 1");
  Rng speaker_rng(mix_seed(seed, 1));
  Rng text_rng(mix_seed(seed, 2));
  std::vector<SpeakerParams> speakers;
  for (int i = 0; i < n_speakers; ++i) speakers.push_back(sample_speaker(speaker_rng));
  std::vector<std::string> texts;
  for (int i = 0; i < n_texts; ++i) texts.push_back(sample_text(text_rng, cfg));
  return build_corpus(std::move(speakers), std::move(texts), seed, cfg);
}

Corpus build_corpus(std::vector<SpeakerParams> speakers, std::vector<std::string> texts, std::uint64_t seed,
                    const DataConfig& cfg) {
  if (speakers.empty() || texts.empty()) throw std::invalid_argument("build_corpus: empty speaker or text list");
  Corpus corpus;
  corpus.config = cfg;
  corpus.seed = seed;
  corpus.speakers = std::move(speakers);
  corpus.texts = std::move(texts);
  const std::size_t n_texts = corpus.texts.size();
  for (std::size_t s = 0; s < corpus.speakers.size(); ++s) {
    for (std::size_t t = 0; t < n_texts; ++t) {
      const std::uint64_t cell = s * n_texts + t;
      const Utterance u = gen_utterance(corpus.speakers[s], corpus.texts[t], mix_seed(seed, 1000 + 2 * cell), cfg);
      try {
        Rng split_rng(mix_seed(seed, 1001 + 2 * cell));
        SpeechPair p = split_prompt_target(u, split_rng);
        p.speaker_index = static_cast<int>(s);
        corpus.speech.push_back(std::move(p));
      } catch (const SkipError&) {
      }
      TextPair tp;
      tp.caption = caption_from_params(u.speaker);
      tp.target_mel = u.mel;
      tp.target_chars = u.chars;
      tp.target_text = u.text;
      tp.speaker_index = static_cast<int>(s);
      corpus.text.push_back(std::move(tp));
    }
  }
  return corpus;
}

// ------------------------------------------------------------ serialization

std::string serialize_corpus(const Corpus& c) {
  ByteWriter w;
  w.raw(std::string_view(kCorpusMagic, 8));
  w.u32(kCorpusVersion);

  ByteWriter header;
  header.u64(c.seed);
  header.u32(static_cast<std::uint32_t>(c.config.n_mels));
  header.u32(static_cast<std::uint32_t>(c.config.base_frames));
  header.f32(static_cast<float>(c.config.noise_std));
  header.f32(static_cast<float>(c.config.tilt_gain));
  header.f32(static_cast<float>(c.config.modulation_depth));
  header.u32(static_cast<std::uint32_t>(c.config.modulation_period));
  header.f32(static_cast<float>(c.config.bump_width));
  header.f32(static_cast<float>(c.config.secondary_gain));
  header.u32(static_cast<std::uint32_t>(c.config.min_words));
  header.u32(static_cast<std::uint32_t>(c.config.max_words));
  header.u32(static_cast<std::uint32_t>(c.config.min_word_len));
  header.u32(static_cast<std::uint32_t>(c.config.max_word_len));
  w.record(header);

  w.u32(static_cast<std::uint32_t>(c.speakers.size()));
  for (const auto& s : c.speakers) {
    ByteWriter r;
    r.u32(static_cast<std::uint32_t>(s.pitch_idx));
    r.f32(static_cast<float>(s.tilt));
    r.f32(static_cast<float>(s.rate));
    r.f32(static_cast<float>(s.expressiveness));
    w.record(r);
  }
  w.u32(static_cast<std::uint32_t>(c.texts.size()));
  for (const auto& t : c.texts) {
    ByteWriter r;
    r.str(t);
    w.record(r);
  }
  w.u32(static_cast<std::uint32_t>(c.speech.size()));
  for (const auto& p : c.speech) {
    ByteWriter r;
    r.u32(static_cast<std::uint32_t>(p.speaker_index));
    r.str(p.prompt_text);
    r.str(p.target_text);
    r.grid(p.prompt_mel);
    r.grid(p.target_mel);
    w.record(r);
  }
  w.u32(static_cast<std::uint32_t>(c.text.size()));
  for (const auto& p : c.text) {
    ByteWriter r;
    r.u32(static_cast<std::uint32_t>(p.speaker_index));
    for (int lv : p.caption.levels) r.u8(static_cast<std::uint8_t>(lv));
    r.str(p.target_text);
    r.grid(p.target_mel);
    w.record(r);
  }
  return w.bytes();
}

Corpus deserialize_corpus(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.raw(8) != std::string_view(kCorpusMagic, 8)) throw FormatError("not a corpus file (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kCorpusVersion) throw FormatError("unsupported corpus version " + std::to_string(version));

  Corpus c;
  {
    ByteReader h = in.record();
    c.seed = h.u64();
    c.config.n_mels = static_cast<int>(h.u32());
    c.config.base_frames = static_cast<int>(h.u32());
    c.config.noise_std = h.f32();
    c.config.tilt_gain = h.f32();
    c.config.modulation_depth = h.f32();
    c.config.modulation_period = static_cast<int>(h.u32());
    c.config.bump_width = h.f32();
    c.config.secondary_gain = h.f32();
    c.config.min_words = static_cast<int>(h.u32());
    c.config.max_words = static_cast<int>(h.u32());
    c.config.min_word_len = static_cast<int>(h.u32());
    c.config.max_word_len = static_cast<int>(h.u32());
  }
  const std::uint32_t n_speakers = in.u32();
  for (std::uint32_t i = 0; i < n_speakers; ++i) {
    ByteReader r = in.record();
    SpeakerParams s;
    s.pitch_idx = static_cast<int>(r.u32());
    s.tilt = r.f32();
    s.rate = r.f32();
    s.expressiveness = r.f32();
    c.speakers.push_back(s);
  }
  const std::uint32_t n_texts = in.u32();
  for (std::uint32_t i = 0; i < n_texts; ++i) {
    ByteReader r = in.record();
    c.texts.push_back(r.str());
  }
  auto check_speaker = [&](std::uint32_t idx) {
    if (idx >= c.speakers.size()) throw FormatError("corpus record references unknown speaker");
    return static_cast<int>(idx);
  };
  const std::uint32_t n_speech = in.u32();
  for (std::uint32_t i = 0; i < n_speech; ++i) {
    ByteReader r = in.record();
    SpeechPair p;
    p.speaker_index = check_speaker(r.u32());
    p.prompt_text = r.str();
    p.target_text = r.str();
    p.prompt_mel = r.grid();
    p.target_mel = r.grid();
    p.target_chars = tokenize(p.target_text);
    c.speech.push_back(std::move(p));
  }
  const std::uint32_t n_text = in.u32();
  for (std::uint32_t i = 0; i < n_text; ++i) {
    ByteReader r = in.record();
    TextPair p;
    p.speaker_index = check_speaker(r.u32());
    for (int& lv : p.caption.levels) lv = r.u8();
    p.caption.validate();
    p.target_text = r.str();
    p.target_mel = r.grid();
    p.target_chars = tokenize(p.target_text);
    c.text.push_back(std::move(p));
  }
  if (!in.done()) throw FormatError("trailing bytes after corpus records");
  return c;
}

void save_corpus(const Corpus& corpus, const std::string& path) { write_file_bytes(path, serialize_corpus(corpus)); }

Corpus load_corpus(const std::string& path) { return deserialize_corpus(read_file_bytes(path)); }

// ------------------------------------------------------------------- oracle

namespace {

struct FrameFit {
  double slope = 0.0;
  double peak = 0.0;
  int peak_bin = 0;
};

// Line fit over bins not covered by a bump: bins sitting well above the
// current line are excluded together with their neighbours, then refit.
FrameFit fit_frame(const double* y, int n) {
  const double center = 0.5 * (n - 1);
  std::vector<bool> use(static_cast<std::size_t>(n), true);
  double a = 0.0, s = 0.0;
  for (int iter = 0; iter < 4; ++iter) {
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int b = 0; b < n; ++b) {
      if (!use[static_cast<std::size_t>(b)]) continue;
      const double x = b - center;
      sw += 1;
      sx += x;
      sy += y[b];
      sxx += x * x;
      sxy += x * y[b];
    }
    const double det = sw * sxx - sx * sx;
    if (sw < 3 || det <= 0) break;
    s = (sw * sxy - sx * sy) / det;
    a = (sy - s * sx) / sw;
    std::vector<bool> next(static_cast<std::size_t>(n), true);
    for (int b = 0; b < n; ++b) {
      if (y[b] - (a + s * (b - center)) > 0.15) {
        for (int d = -1; d <= 1; ++d)
          if (b + d >= 0 && b + d < n) next[static_cast<std::size_t>(b + d)] = false;
      }
    }
    if (next == use) break;
    use = std::move(next);
  }
  FrameFit f;
  f.slope = s;
  f.peak = -INFINITY;
  for (int b = 0; b < n; ++b) {
    const double r = y[b] - (a + s * (b - center));
    if (r > f.peak) {
      f.peak = r;
      f.peak_bin = b;
    }
  }
  return f;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

}  // namespace

OracleEstimate invert_attributes(const MelGrid& mel, int n_chars, const DataConfig& cfg) {
  if (mel.rows() < 1) throw std::invalid_argument("invert_attributes: empty spectrogram");
  if (n_chars < 1) throw std::invalid_argument("invert_attributes: n_chars must be >= 1");
  const int n = mel.cols();
  const double center = 0.5 * (n - 1);
  std::vector<double> slopes;
  std::vector<double> peaks;
  std::array<int, kPitchLevels> votes{};
  for (int t = 0; t < mel.rows(); ++t) {
    const FrameFit f = fit_frame(mel.row(t), n);
    slopes.push_back(f.slope);
    if (f.peak > 0.3) {
      peaks.push_back(f.peak);
      const int cls = ((f.peak_bin - kFirstFormantBin) % kFormantSpacing + kFormantSpacing) % kFormantSpacing;
      ++votes[static_cast<std::size_t>(cls)];
    }
  }
  OracleEstimate est;
  est.tilt = median(slopes) * center / cfg.tilt_gain;
  est.rate = static_cast<double>(cfg.base_frames) * n_chars / mel.rows();
  est.voiced_frames = static_cast<int>(peaks.size());
  if (!peaks.empty()) {
    est.pitch_idx = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    double mean = 0.0;
    for (double p : peaks) mean += p;
    mean /= static_cast<double>(peaks.size());
    double var = 0.0;
    for (double p : peaks) var += (p - mean) * (p - mean);
    var /= static_cast<double>(peaks.size());
    const double rel_var = var / (mean * mean) - (cfg.noise_std * cfg.noise_std) / (mean * mean);
    const double sin_var = 0.5 * cfg.modulation_depth * cfg.modulation_depth;
    est.expressiveness = std::sqrt(std::max(rel_var, 0.0) / sin_var);
  }
  return est;
}

}  // namespace cast
