#include "cast/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cast/rng.hpp"

namespace cast {

namespace {

constexpr std::size_t kMissing = std::numeric_limits<std::size_t>::max();

enum Global : std::size_t {
  kCharTable,
  kStepW1,
  kStepB1,
  kStepW2,
  kStepB2,
  kInWx,
  kInWc,
  kInB,
  kTimbreInW,
  kTimbreInB,
  kHeadW,
  kHeadB,
  kNullCond,
  kNullTimbre,
  kTagSpeech,
  kTagText,
  kProjW,
  kProjB,
  kSpeechW,
  kSpeechB,
  kTextTable,
  kTextTags,
  kGlobalCount
};

enum ConvSlot : std::size_t { kDwW, kDwB, kLnG, kLnB, kPw1W, kPw1B, kGrnG, kGrnB, kPw2W, kPw2B, kConvCount };

enum BlockSlot : std::size_t {
  kAttnModW,
  kAttnModB,
  kWq,
  kWk,
  kWv,
  kWo,
  kBo,
  kXModW,
  kXModB,
  kXWq,
  kXWk,
  kXWv,
  kXWo,
  kXBo,
  kFfModW,
  kFfModB,
  kFfW1,
  kFfB1,
  kFfW2,
  kFfB2,
  kSkipW,
  kSkipB,
  kBlockCount
};

enum class Init { Zero, One, Xavier, Normal, Frozen };

struct ParamSpec {
  std::size_t slot;
  std::string name;
  int rows;
  int cols;
  Init init;
  double std = 0.0;
};

std::size_t conv_slot(int block, ConvSlot s) { return kGlobalCount + static_cast<std::size_t>(block) * kConvCount + s; }

std::size_t block_slot(const ModelConfig& cfg, int layer, BlockSlot s) {
  return kGlobalCount + static_cast<std::size_t>(cfg.n_conv) * kConvCount +
         static_cast<std::size_t>(layer) * kBlockCount + s;
}

std::size_t slot_count(const ModelConfig& cfg) { return block_slot(cfg, cfg.block.n_layers, kAttnModW); }

int text_table_rows() {
  int rows = 0;
  for (int a : kAttributeArity) rows += a;
  return rows;
}

// Every parameter of a configuration in creation order.
std::vector<ParamSpec> layout(const ModelConfig& cfg) {
  const int d = cfg.block.d_model;
  const int dt = cfg.block.d_timbre;
  const int ff = cfg.ff_mult * d;
  const int wide = cfg.conv_expand * d;
  const Fusion fusion = cfg.block.fusion;
  std::vector<ParamSpec> out;
  auto add = [&](std::size_t slot, std::string name, int r, int c, Init init, double std = 0.0) {
    out.push_back({slot, std::move(name), r, c, init, std});
  };

  add(kCharTable, "char_embed.table", vocab::kSize, d, Init::Normal, 1.0);
  for (int i = 0; i < cfg.n_conv; ++i) {
    const std::string pre = "convnext." + std::to_string(i) + ".";
    add(conv_slot(i, kDwW), pre + "dw.w", cfg.conv_kernel, d, Init::Normal, 1.0 / std::sqrt(cfg.conv_kernel));
    add(conv_slot(i, kDwB), pre + "dw.b", 1, d, Init::Zero);
    add(conv_slot(i, kLnG), pre + "norm.g", 1, d, Init::One);
    add(conv_slot(i, kLnB), pre + "norm.b", 1, d, Init::Zero);
    add(conv_slot(i, kPw1W), pre + "pw1.w", d, wide, Init::Xavier);
    add(conv_slot(i, kPw1B), pre + "pw1.b", 1, wide, Init::Zero);
    add(conv_slot(i, kGrnG), pre + "grn.g", 1, wide, Init::Zero);
    add(conv_slot(i, kGrnB), pre + "grn.b", 1, wide, Init::Zero);
    add(conv_slot(i, kPw2W), pre + "pw2.w", wide, d, Init::Xavier);
    add(conv_slot(i, kPw2B), pre + "pw2.b", 1, d, Init::Zero);
  }
  add(kStepW1, "step_mlp.w1", cfg.step_features, d, Init::Xavier);
  add(kStepB1, "step_mlp.b1", 1, d, Init::Zero);
  add(kStepW2, "step_mlp.w2", d, d, Init::Xavier);
  add(kStepB2, "step_mlp.b2", 1, d, Init::Zero);
  add(kInWx, "in_proj.w_x", cfg.n_mels, d, Init::Xavier);
  add(kInWc, "in_proj.w_c", d, d, Init::Zero);
  add(kInB, "in_proj.b", 1, d, Init::Zero);
  if (cfg.block.has_inline_timbre()) {
    add(kTimbreInW, "timbre_in.w", dt, d, Init::Xavier);
    add(kTimbreInB, "timbre_in.b", 1, d, Init::Zero);
  }
  for (int l = 0; l < cfg.block.n_layers; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    if (l >= cfg.block.n_layers / 2) {
      add(block_slot(cfg, l, kSkipW), pre + "skip.w", 2 * d, d, Init::Xavier);
      add(block_slot(cfg, l, kSkipB), pre + "skip.b", 1, d, Init::Zero);
    }
    add(block_slot(cfg, l, kAttnModW), pre + "attn_mod.w", d, 3 * d, Init::Zero);
    add(block_slot(cfg, l, kAttnModB), pre + "attn_mod.b", 1, 3 * d, Init::Zero);
    add(block_slot(cfg, l, kWq), pre + "attn.wq", d, d, Init::Xavier);
    add(block_slot(cfg, l, kWk), pre + "attn.wk", d, d, Init::Xavier);
    add(block_slot(cfg, l, kWv), pre + "attn.wv", d, d, Init::Xavier);
    add(block_slot(cfg, l, kWo), pre + "attn.wo", d, d, Init::Xavier);
    add(block_slot(cfg, l, kBo), pre + "attn.bo", 1, d, Init::Zero);
    if (cfg.block.has_cross_attention()) {
      add(block_slot(cfg, l, kXModW), pre + "xattn_mod.w", d, 3 * d, Init::Zero);
      add(block_slot(cfg, l, kXModB), pre + "xattn_mod.b", 1, 3 * d, Init::Zero);
      add(block_slot(cfg, l, kXWq), pre + "xattn.wq", d, d, Init::Xavier);
      add(block_slot(cfg, l, kXWk), pre + "xattn.wk", dt, d, Init::Xavier);
      add(block_slot(cfg, l, kXWv), pre + "xattn.wv", dt, d, Init::Xavier);
      add(block_slot(cfg, l, kXWo), pre + "xattn.wo", d, d, Init::Xavier);
      add(block_slot(cfg, l, kXBo), pre + "xattn.bo", 1, d, Init::Zero);
    }
    add(block_slot(cfg, l, kFfModW), pre + "ff_mod.w", d, 3 * d, Init::Zero);
    add(block_slot(cfg, l, kFfModB), pre + "ff_mod.b", 1, 3 * d, Init::Zero);
    add(block_slot(cfg, l, kFfW1), pre + "ff.w1", d, ff, Init::Xavier);
    add(block_slot(cfg, l, kFfB1), pre + "ff.b1", 1, ff, Init::Zero);
    add(block_slot(cfg, l, kFfW2), pre + "ff.w2", ff, d, Init::Xavier);
    add(block_slot(cfg, l, kFfB2), pre + "ff.b2", 1, d, Init::Zero);
  }
  add(kHeadW, "head.w", d, cfg.n_mels, Init::Xavier);
  add(kHeadB, "head.b", 1, cfg.n_mels, Init::Zero);
  add(kNullCond, "null.cond", 1, d, Init::Normal, 0.02);
  add(kNullTimbre, "null.timbre", 1, dt, Init::Normal, 0.02);
  if (fusion == Fusion::CA_TV) {
    add(kTagSpeech, "task_tag.speech", 1, dt, Init::Normal, 0.02);
    add(kTagText, "task_tag.text", 1, dt, Init::Normal, 0.02);
  }
  add(kProjW, "projector.w", cfg.text_dim, dt, Init::Xavier);
  add(kProjB, "projector.b", 1, dt, Init::Zero);
  add(kSpeechW, "speech_enc.weight", 2 * cfg.n_mels, dt, Init::Frozen);
  add(kSpeechB, "speech_enc.bias", 1, dt, Init::Frozen);
  add(kTextTable, "text_enc.table", text_table_rows(), cfg.text_dim, Init::Frozen);
  add(kTextTags, "text_enc.pos_tags", kNumAttributes, cfg.text_dim, Init::Frozen);
  return out;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

const char* to_string(Fusion f) {
  switch (f) {
    case Fusion::SA: return "SA";
    case Fusion::SACA: return "SACA";
    case Fusion::CA: return "CA";
    case Fusion::CA_TV: return "CA_TV";
  }
  return "?";
}

Fusion parse_fusion(std::string_view name) {
  for (Fusion f : {Fusion::SA, Fusion::SACA, Fusion::CA, Fusion::CA_TV})
    if (iequals(name, to_string(f))) return f;
  throw std::invalid_argument("unknown fusion variant '" + std::string(name) + "' (expected SA, SACA, CA or CA_TV)");
}

void ModelConfig::validate() const {
  std::vector<std::string> errors;
  auto need = [&](bool ok, const char* msg) {
    if (!ok) errors.emplace_back(msg);
  };
  need(block.n_layers >= 2 && block.n_layers % 2 == 0, "block.n_layers must be a positive even number");
  need(block.n_heads >= 1, "block.n_heads must be >= 1");
  need(block.d_model >= 2, "block.d_model must be >= 2");
  need(block.n_heads >= 1 && block.d_model % block.n_heads == 0, "block.d_model must be divisible by block.n_heads");
  need(block.n_heads >= 1 && (block.d_model / std::max(block.n_heads, 1)) % 2 == 0,
       "block.d_model / block.n_heads must be even for rotary positions");
  need(block.d_timbre >= 1, "block.d_timbre must be >= 1");
  need(static_cast<int>(block.fusion) <= static_cast<int>(Fusion::CA_TV), "block.fusion is not a known variant");
  need(n_mels >= 1, "n_mels must be >= 1");
  need(text_dim >= 1, "text_dim must be >= 1");
  need(n_conv >= 0, "n_conv must be >= 0");
  need(conv_kernel >= 1 && conv_kernel % 2 == 1, "conv_kernel must be a positive odd number");
  need(conv_expand >= 1, "conv_expand must be >= 1");
  need(ff_mult >= 1, "ff_mult must be >= 1");
  need(step_features >= 2 && step_features % 2 == 0, "step_features must be a positive even number");
  need(chunk_size >= 1, "chunk_size must be >= 1");
  if (errors.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw std::invalid_argument(msg);
}

Matrix step_features(FlowStep tau, int n_features) {
  const int half = n_features / 2;
  const double s = 1000.0 * tau.tau();
  Matrix out(1, n_features);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out(0, i) = std::sin(s * freq);
    out(0, half + i) = std::cos(s * freq);
  }
  return out;
}

// ------------------------------------------------------------- construction

CastModel::CastModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const SpeechEncoder speech = SpeechEncoder::make_frozen(cfg_.n_mels, cfg_.block.d_timbre, cfg_.chunk_size);
  const TextEncoder text = TextEncoder::make_frozen(cfg_.text_dim);
  Rng rng(mix_seed(seed, 0x1417));
  for (const ParamSpec& spec : layout(cfg_)) {
    Matrix value(spec.rows, spec.cols);
    switch (spec.init) {
      case Init::Zero: break;
      case Init::One: value.fill(1.0); break;
      case Init::Xavier: {
        const double std = std::sqrt(2.0 / (spec.rows + spec.cols));
        for (double& v : value.values()) v = std * rng.normal();
        break;
      }
      case Init::Normal:
        for (double& v : value.values()) v = spec.std * rng.normal();
        break;
      case Init::Frozen:
        if (spec.slot == kSpeechW) value = speech.weight();
        if (spec.slot == kSpeechB) value = speech.bias();
        if (spec.slot == kTextTable) value = text.level_table();
        if (spec.slot == kTextTags) value = text.position_tags();
        break;
    }
    round_to_float(value);
    params_.add(spec.name, std::move(value), spec.init == Init::Frozen);
  }
  bind_slots();
}

CastModel::CastModel(const ModelConfig& cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  const auto specs = layout(cfg_);
  if (params_.size() != specs.size())
    throw std::invalid_argument("parameter count " + std::to_string(params_.size()) + " does not match the " +
                                std::to_string(specs.size()) + " expected by the model config");
  for (const ParamSpec& spec : specs) {
    if (!params_.contains(spec.name)) throw std::invalid_argument("missing parameter " + spec.name);
    const Param& p = params_.at(spec.name);
    if (p.value.rows() != spec.rows || p.value.cols() != spec.cols)
      throw std::invalid_argument("parameter " + spec.name + " has shape " + p.value.shape_string() + ", expected " +
                                  std::to_string(spec.rows) + "x" + std::to_string(spec.cols));
    if (p.frozen != (spec.init == Init::Frozen))
      throw std::invalid_argument("parameter " + spec.name + " has the wrong frozen flag");
  }
  bind_slots();
}

void CastModel::bind_slots() {
  slots_.assign(slot_count(cfg_), kMissing);
  for (const ParamSpec& spec : layout(cfg_)) slots_[spec.slot] = params_.index_of(spec.name);
}

CastModel build_variant(const BlockConfig& cfg, std::uint64_t seed) {
  ModelConfig mc;
  mc.block = cfg;
  return CastModel(mc, seed);
}

// ------------------------------------------------------------------- graphs

ag::Var CastModel::param(ag::Tape& tape, std::string_view name) const { return p(tape, params_.index_of(name)); }

ag::Var CastModel::embed_graph(ag::Tape& tape, const CharSeq& chars, int target_frames) const {
  if (target_frames < 1) throw std::invalid_argument("embed_and_pad: target_frames must be >= 1");
  if (chars.size() > target_frames)
    throw std::invalid_argument("embed_and_pad: transcription of " + std::to_string(chars.size()) +
                                " characters exceeds " + std::to_string(target_frames) + " frames");
  std::vector<int> ids = chars.tokens;
  ids.resize(static_cast<std::size_t>(target_frames), vocab::kFiller);
  return ag::embedding(p(tape, slots_[kCharTable]), ids);
}

ag::Var CastModel::convnext_graph(ag::Tape& tape, ag::Var x) const {
  if (x.rows() < 1) throw std::invalid_argument("convnext_encode: empty sequence");
  for (int i = 0; i < cfg_.n_conv; ++i) {
    auto at = [&](ConvSlot s) { return p(tape, slots_[conv_slot(i, s)]); };
    ag::Var h = ag::depthwise_conv1d(x, at(kDwW), at(kDwB));
    h = ag::add_row(ag::mul_row(ag::layer_norm(h), at(kLnG)), at(kLnB));
    h = ag::gelu(ag::linear(h, at(kPw1W), at(kPw1B)));
    h = ag::global_response_norm(h, at(kGrnG), at(kGrnB));
    h = ag::linear(h, at(kPw2W), at(kPw2B));
    x = ag::add(x, h);
  }
  return x;
}

ag::Var CastModel::cond_graph(ag::Tape& tape, const CharSeq& chars, int target_frames) const {
  return convnext_graph(tape, embed_graph(tape, chars, target_frames));
}

TimbreVar CastModel::speech_timbre_graph(ag::Tape& tape, const MelGrid& prompt) const {
  return {tape.constant(speech_encode(prompt).frames), Modality::Speech};
}

TimbreVar CastModel::text_timbre_graph(ag::Tape& tape, const Caption& caption) const {
  ag::Var embeds = tape.constant(text_encode(caption));
  return {ag::linear(embeds, p(tape, slots_[kProjW]), p(tape, slots_[kProjB])), Modality::Text};
}

ag::Var CastModel::block_graph(ag::Tape& tape, std::size_t layer, ag::Var h, ag::Var c, int latent_rows,
                               const std::optional<ag::Var>& xattn_kv, std::optional<ag::Var> skip,
                               const ForwardOptions& opts) const {
  const int d = cfg_.block.d_model;
  const int heads = cfg_.block.n_heads;
  auto at = [&](BlockSlot s) { return p(tape, slots_[block_slot(cfg_, static_cast<int>(layer), s)]); };
  if (skip) h = ag::linear(ag::concat_cols(h, *skip), at(kSkipW), at(kSkipB));
  if (opts.ablate_branches) return h;

  // Each branch: modulated pre-norm, sublayer, gated residual.
  auto branch = [&](BlockSlot mod_w, BlockSlot mod_b, auto&& sublayer) {
    ag::Var mod = ag::linear(c, at(mod_w), at(mod_b));
    ag::Var shift = ag::slice_cols(mod, 0, d);
    ag::Var scale = ag::slice_cols(mod, d, d);
    ag::Var gate = ag::slice_cols(mod, 2 * d, d);
    ag::Var out = sublayer(ag::modulate(ag::layer_norm(h), shift, scale));
    h = ag::add(h, ag::mul_row(out, gate));
  };

  branch(kAttnModW, kAttnModB, [&](ag::Var a) {
    ag::Var q = ag::rope(ag::linear(a, at(kWq), {}), heads, latent_rows);
    ag::Var k = ag::rope(ag::linear(a, at(kWk), {}), heads, latent_rows);
    ag::Var v = ag::linear(a, at(kWv), {});
    return ag::linear(ag::attention(q, k, v, heads), at(kWo), at(kBo));
  });
  if (xattn_kv) {
    branch(kXModW, kXModB, [&](ag::Var a) {
      ag::Var q = ag::linear(a, at(kXWq), {});
      ag::Var k = ag::linear(*xattn_kv, at(kXWk), {});
      ag::Var v = ag::linear(*xattn_kv, at(kXWv), {});
      return ag::linear(ag::attention(q, k, v, heads), at(kXWo), at(kXBo));
    });
  }
  branch(kFfModW, kFfModB, [&](ag::Var a) {
    ag::Var f = ag::gelu(ag::linear(a, at(kFfW1), at(kFfB1)));
    return ag::linear(f, at(kFfW2), at(kFfB2));
  });
  return h;
}

ag::Var CastModel::velocity_graph(ag::Tape& tape, ag::Var x_tau, ag::Var cond, const std::optional<TimbreVar>& timbre,
                                  FlowStep tau, bool cfg_drop, const ForwardOptions& opts) const {
  const int frames = x_tau.rows();
  const int dt = cfg_.block.d_timbre;
  if (frames < 1) throw std::invalid_argument("backbone_forward: x_tau has no frames");
  if (x_tau.cols() != cfg_.n_mels)
    throw std::invalid_argument("backbone_forward: x_tau has " + std::to_string(x_tau.cols()) + " bins, expected " +
                                std::to_string(cfg_.n_mels));

  std::optional<TimbreVar> t;
  if (cfg_drop) {
    cond = ag::repeat_row(p(tape, slots_[kNullCond]), frames);
  } else {
    if (!cond.valid() || cond.rows() != frames)
      throw std::invalid_argument("backbone_forward: cond length " + std::to_string(cond.valid() ? cond.rows() : 0) +
                                  " != x_tau frames " + std::to_string(frames));
    if (cond.cols() != cfg_.block.d_model) throw std::invalid_argument("backbone_forward: cond width mismatch");
    if (!timbre) throw std::invalid_argument("backbone_forward: timbre is required unless cfg_drop is set");
    if (timbre->frames.rows() < 1 || timbre->frames.cols() != dt)
      throw std::invalid_argument("backbone_forward: timbre must be T x " + std::to_string(dt) + " with T >= 1");
    t = timbre;
  }

  ag::Var h = ag::add_row(ag::add(ag::linear(x_tau, p(tape, slots_[kInWx]), {}),
                                  ag::linear(cond, p(tape, slots_[kInWc]), {})),
                          p(tape, slots_[kInB]));

  // Route the timbre into the sequence and/or cross-attention.
  std::optional<ag::Var> inline_timbre;
  std::optional<ag::Var> xattn_kv;
  const ag::Var null_t = p(tape, slots_[kNullTimbre]);
  switch (cfg_.block.fusion) {
    case Fusion::SA: inline_timbre = t ? t->frames : null_t; break;
    case Fusion::SACA:
      if (t && t->modality == Modality::Speech) {
        inline_timbre = t->frames;
        xattn_kv = null_t;
      } else {
        xattn_kv = t ? t->frames : null_t;
      }
      break;
    case Fusion::CA: xattn_kv = t ? t->frames : null_t; break;
    case Fusion::CA_TV:
      if (t) {
        const ag::Var tag = p(tape, slots_[t->modality == Modality::Speech ? kTagSpeech : kTagText]);
        xattn_kv = ag::concat_rows(tag, t->frames);
      } else {
        xattn_kv = null_t;
      }
      break;
  }
  if (inline_timbre) {
    ag::Var proj = ag::linear(*inline_timbre, p(tape, slots_[kTimbreInW]), p(tape, slots_[kTimbreInB]));
    h = ag::concat_rows(h, proj);
  }

  ag::Var step = tape.constant(step_features(tau, cfg_.step_features));
  step = ag::linear(ag::silu(ag::linear(step, p(tape, slots_[kStepW1]), p(tape, slots_[kStepB1]))),
                    p(tape, slots_[kStepW2]), p(tape, slots_[kStepB2]));
  const ag::Var c = ag::silu(step);

  const int n = cfg_.block.n_layers;
  std::vector<ag::Var> skips;
  for (int l = 0; l < n; ++l) {
    std::optional<ag::Var> skip;
    if (l >= n / 2) skip = skips[static_cast<std::size_t>(n - 1 - l)];
    h = block_graph(tape, static_cast<std::size_t>(l), h, c, frames, xattn_kv, skip, opts);
    if (l < n / 2) skips.push_back(h);
  }
  if (inline_timbre) h = ag::slice_rows(h, 0, frames);
  return ag::linear(ag::layer_norm(h), p(tape, slots_[kHeadW]), p(tape, slots_[kHeadB]));
}

// --------------------------------------------------------- plain evaluation

Matrix CastModel::embed_and_pad(const CharSeq& chars, int target_frames) const {
  ag::Tape tape(false);
  return embed_graph(tape, chars, target_frames).value();
}

Matrix CastModel::convnext_encode(const Matrix& x) const {
  ag::Tape tape(false);
  return convnext_graph(tape, tape.constant(x)).value();
}

Matrix CastModel::cond_seq(const CharSeq& chars, int target_frames) const {
  ag::Tape tape(false);
  return cond_graph(tape, chars, target_frames).value();
}

Matrix CastModel::step_embedding(FlowStep tau) const {
  ag::Tape tape(false);
  ag::Var f = tape.constant(step_features(tau, cfg_.step_features));
  return ag::linear(ag::silu(ag::linear(f, p(tape, slots_[kStepW1]), p(tape, slots_[kStepB1]))),
                    p(tape, slots_[kStepW2]), p(tape, slots_[kStepB2]))
      .value();
}

SpeechEncoder CastModel::speech_encoder() const {
  return SpeechEncoder(params_[slots_[kSpeechW]].value, params_[slots_[kSpeechB]].value, cfg_.chunk_size);
}

TextEncoder CastModel::text_encoder() const {
  return TextEncoder(params_[slots_[kTextTable]].value, params_[slots_[kTextTags]].value);
}

TimbreSeq CastModel::speech_encode(const MelGrid& prompt) const { return speech_encoder().encode(prompt); }

Matrix CastModel::text_encode(const Caption& caption) const { return text_encoder().encode(caption); }

TimbreSeq CastModel::project(const Matrix& text_embeds) const {
  return cast::project(text_embeds, params_[slots_[kProjW]].value, params_[slots_[kProjB]].value);
}

TimbreSeq CastModel::text_timbre(const Caption& caption) const { return project(text_encode(caption)); }

TimbreSeq CastModel::null_timbre() const { return TimbreSeq{params_[slots_[kNullTimbre]].value, Modality::Speech}; }

Matrix CastModel::null_cond(int frames) const {
  if (frames < 1) throw std::invalid_argument("null_cond: frames must be >= 1");
  const Matrix& row = params_[slots_[kNullCond]].value;
  Matrix out(frames, row.cols());
  for (int r = 0; r < frames; ++r) std::copy(row.row(0), row.row(0) + row.cols(), out.row(r));
  return out;
}

MelGrid CastModel::backbone_forward(const MelGrid& x_tau, const Matrix& cond, const TimbreSeq* timbre, FlowStep tau,
                                    bool cfg_drop, const ForwardOptions& opts) const {
  ag::Tape tape(false);
  std::optional<TimbreVar> t;
  if (timbre) t = TimbreVar{tape.constant(timbre->frames), timbre->modality};
  ag::Var c = cfg_drop ? ag::Var{} : tape.constant(cond);
  return velocity_graph(tape, tape.constant(x_tau), c, t, tau, cfg_drop, opts).value();
}

}  // namespace cast
