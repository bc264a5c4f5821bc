#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cast/autograd.hpp"
#include "cast/chars.hpp"
#include "cast/flow.hpp"
#include "cast/matrix.hpp"
#include "cast/params.hpp"
#include "cast/timbre.hpp"

namespace cast {

/// How the timbre sequence reaches the transformer.
///   SA    - concatenated along time with the latent; no cross-attention.
///   SACA  - speech timbre concatenated, text timbre through cross-attention.
///   CA    - both modalities through cross-attention.
///   CA_TV - CA with a learned modality tag prepended to the timbre.
enum class Fusion : std::uint8_t { SA = 0, SACA = 1, CA = 2, CA_TV = 3 };

const char* to_string(Fusion f);
/// Accepts "SA", "SACA", "CA", "CA_TV" (case-insensitive).
Fusion parse_fusion(std::string_view name);

struct BlockConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int d_timbre = 32;
  Fusion fusion = Fusion::CA;

  bool has_cross_attention() const { return fusion != Fusion::SA; }
  bool has_inline_timbre() const { return fusion == Fusion::SA || fusion == Fusion::SACA; }
  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

struct ModelConfig {
  BlockConfig block;
  int n_mels = 16;
  int text_dim = 48;
  int n_conv = 2;
  int conv_kernel = 7;
  int conv_expand = 4;
  int ff_mult = 2;
  int step_features = 64;
  int chunk_size = SpeechEncoder::kDefaultChunkSize;

  /// Collects every violated constraint into one std::invalid_argument.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Sinusoidal features of 1000 * tau: sin half then cos half.
Matrix step_features(FlowStep tau, int n_features);

struct ForwardOptions {
  /// Skip every attention / cross-attention / FFN branch entirely.
  bool ablate_branches = false;
};

/// A timbre sequence living on a tape.
struct TimbreVar {
  ag::Var frames;
  Modality modality = Modality::Speech;
};

/// Parameters plus the forward computation of the synthesis network,
/// the stand-in encoders and the text projector.
class CastModel {
 public:
  explicit CastModel(const ModelConfig& cfg, std::uint64_t seed = 0);
  /// Adopts `params`, which must match the layout of `cfg` exactly.
  CastModel(const ModelConfig& cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // ---- plain evaluation ----
  Matrix embed_and_pad(const CharSeq& chars, int target_frames) const;
  Matrix convnext_encode(const Matrix& x) const;
  Matrix cond_seq(const CharSeq& chars, int target_frames) const;
  Matrix step_embedding(FlowStep tau) const;

  SpeechEncoder speech_encoder() const;
  TextEncoder text_encoder() const;
  TimbreSeq speech_encode(const MelGrid& prompt) const;
  Matrix text_encode(const Caption& caption) const;
  TimbreSeq project(const Matrix& text_embeds) const;
  TimbreSeq text_timbre(const Caption& caption) const;

  TimbreSeq null_timbre() const;
  Matrix null_cond(int frames) const;

  /// Predicted velocity. `timbre` may be null only when cfg_drop is set.
  MelGrid backbone_forward(const MelGrid& x_tau, const Matrix& cond, const TimbreSeq* timbre, FlowStep tau,
                           bool cfg_drop, const ForwardOptions& opts = {}) const;

  // ---- differentiable evaluation ----
  ag::Var param(ag::Tape& tape, std::string_view name) const;
  ag::Var embed_graph(ag::Tape& tape, const CharSeq& chars, int target_frames) const;
  ag::Var convnext_graph(ag::Tape& tape, ag::Var x) const;
  /// convnext_graph(embed_graph(...)).
  ag::Var cond_graph(ag::Tape& tape, const CharSeq& chars, int target_frames) const;
  TimbreVar speech_timbre_graph(ag::Tape& tape, const MelGrid& prompt) const;
  TimbreVar text_timbre_graph(ag::Tape& tape, const Caption& caption) const;
  /// With cfg_drop set, `cond` and `timbre` are ignored and the learned
  /// nulls take their place.
  ag::Var velocity_graph(ag::Tape& tape, ag::Var x_tau, ag::Var cond, const std::optional<TimbreVar>& timbre,
                         FlowStep tau, bool cfg_drop, const ForwardOptions& opts = {}) const;

 private:
  void bind_slots();
  ag::Var p(ag::Tape& tape, std::size_t index) const { return tape.param(params_[index], index); }
  ag::Var block_graph(ag::Tape& tape, std::size_t layer, ag::Var h, ag::Var c, int latent_rows,
                      const std::optional<ag::Var>& xattn_kv, std::optional<ag::Var> skip,
                      const ForwardOptions& opts) const;

  ModelConfig cfg_;
  ParamStore params_;
  std::vector<std::size_t> slots_;
};

/// Freshly initialized model of the given variant with toy defaults for
/// everything outside the block configuration.
CastModel build_variant(const BlockConfig& cfg, std::uint64_t seed = 0);

}  // namespace cast
