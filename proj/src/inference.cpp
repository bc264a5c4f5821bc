#include "cast/inference.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cast/binio.hpp"
#include "cast/chars.hpp"
#include "cast/rng.hpp"

namespace cast {

void SynthesisRequest::validate() const {
  if (target_text.empty()) throw std::invalid_argument("synthesis request: target_text is empty");
  tokenize(target_text);
  if (num_steps < 1) throw std::invalid_argument("synthesis request: num_steps must be >= 1");
  if (const auto* sp = std::get_if<SpeechPrompt>(&prompt)) {
    if (sp->ref_text.empty()) throw std::invalid_argument("synthesis request: speech prompt needs ref_text");
    if (sp->mel.rows() < 1) throw std::invalid_argument("synthesis request: speech prompt is empty");
  } else {
    std::get<Caption>(prompt).validate();
  }
}

int duration_from_speech(std::string_view ref_text, int ref_frames, std::string_view gen_text) {
  if (ref_text.empty()) throw std::invalid_argument("duration_from_speech: ref_text is empty");
  if (ref_frames < 1) throw std::invalid_argument("duration_from_speech: ref_frames must be >= 1");
  if (gen_text.empty()) throw std::invalid_argument("duration_from_speech: gen_text is empty");
  const double frames = static_cast<double>(ref_frames) * static_cast<double>(gen_text.size()) /
                        static_cast<double>(ref_text.size());
  return std::max(1, static_cast<int>(std::lround(frames)));
}

int duration_from_caption(const Caption& caption, std::string_view gen_text, int base_frames) {
  caption.validate();
  if (gen_text.empty()) throw std::invalid_argument("duration_from_caption: gen_text is empty");
  if (base_frames < 1) throw std::invalid_argument("duration_from_caption: base_frames must be >= 1");
  const double mid = kRateMidpoints[caption.level(Attribute::Rate)];
  const int per_char = static_cast<int>(std::lround(base_frames / mid));
  return static_cast<int>(gen_text.size()) * std::max(1, per_char);
}

PreparedConditions prepare_conditions(const CastModel& model, const SynthesisRequest& req, int base_frames) {
  req.validate();
  PreparedConditions out;
  if (const auto* sp = std::get_if<SpeechPrompt>(&req.prompt)) {
    out.frames = duration_from_speech(sp->ref_text, sp->mel.rows(), req.target_text);
    out.timbre = model.speech_encode(sp->mel);
  } else {
    const Caption& c = std::get<Caption>(req.prompt);
    out.frames = duration_from_caption(c, req.target_text, base_frames);
    out.timbre = model.text_timbre(c);
  }
  const CharSeq chars = tokenize(req.target_text);
  if (chars.size() > out.frames)
    throw std::invalid_argument("estimated duration of " + std::to_string(out.frames) + " frames is shorter than the " +
                                std::to_string(chars.size()) + "-character transcription");
  out.cond = model.cond_seq(chars, out.frames);
  return out;
}

MelGrid prior_noise(int frames, int n_mels, std::uint64_t seed) {
  Rng rng(seed);
  MelGrid x(frames, n_mels);
  for (double& v : x.values()) v = rng.normal();
  return x;
}

MelGrid synthesize(const CastModel& model, const SynthesisRequest& req, NfeCounter* nfe, int base_frames) {
  const PreparedConditions pc = prepare_conditions(model, req, base_frames);
  const GuidanceScale w = req.guidance;
  const VelocityFn velocity = [&](const MelGrid& x, FlowStep tau) {
    const MelGrid v_cond = model.backbone_forward(x, pc.cond, &pc.timbre, tau, false);
    if (nfe) ++nfe->count;
    if (w.w() == 1.0) return v_cond;
    const MelGrid v_uncond = model.backbone_forward(x, pc.cond, nullptr, tau, true);
    if (nfe) ++nfe->count;
    return cfg_combine(v_uncond, v_cond, w);
  };
  return euler_sample(velocity, prior_noise(pc.frames, model.config().n_mels, req.seed), req.num_steps);
}

MelGrid synthesize_conditional_only(const CastModel& model, const SynthesisRequest& req, int base_frames) {
  const PreparedConditions pc = prepare_conditions(model, req, base_frames);
  const VelocityFn velocity = [&](const MelGrid& x, FlowStep tau) {
    return model.backbone_forward(x, pc.cond, &pc.timbre, tau, false);
  };
  return euler_sample(velocity, prior_noise(pc.frames, model.config().n_mels, req.seed), req.num_steps);
}

void write_mel(const std::string& path, const MelGrid& mel, const SynthesisRequest& req) {
  ByteWriter w;
  w.grid(mel);
  write_file_bytes(path, w.bytes());
  std::ofstream side(path + ".txt");
  if (!side) throw std::runtime_error("cannot write " + path + ".txt");
  side << "frames " << mel.rows() << "\nbins " << mel.cols() << "\nseed " << req.seed << "\nw " << req.guidance.w()
       << "\nnum_steps " << req.num_steps << "\n";
}

MelGrid read_mel(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  ByteReader r(bytes);
  MelGrid m = r.grid();
  if (!r.done()) throw FormatError("trailing bytes in mel file " + path);
  return m;
}

}  // namespace cast
