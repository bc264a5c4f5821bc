#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cast/backbone.hpp"
#include "cast/data.hpp"
#include "cast/rng.hpp"

namespace cast::testing {

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

/// Overwrites every non-encoder parameter with N(0, scale^2) noise so
/// that no gate or branch is inert.
inline void randomize_params(CastModel& model, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (Param& p : model.params()) {
    if (p.frozen) continue;
    for (double& v : p.value.values()) v = scale * rng.normal();
  }
}

/// The small configuration used for gradient checks.
inline ModelConfig tiny_config(Fusion fusion = Fusion::CA) {
  ModelConfig c;
  c.block = {2, 2, 8, 4, fusion};
  c.n_mels = 6;
  c.text_dim = 6;
  c.n_conv = 1;
  c.conv_kernel = 3;
  c.conv_expand = 2;
  c.ff_mult = 2;
  c.step_features = 8;
  c.chunk_size = 2;
  return c;
}

/// Hand-built corpus for tiny_config: 4-frame targets, 4-frame prompts
/// (two timbre frames at chunk size 2) and random grids throughout.
inline Corpus tiny_corpus(std::uint64_t seed, int n_mels = 6) {
  Rng rng(seed);
  Corpus c;
  c.config.n_mels = n_mels;
  c.speakers.push_back({1, 0.2, 1.0, 0.5});
  const char* texts[] = {"ab c", "ba d"};
  for (const char* t : texts) {
    SpeechPair sp;
    sp.prompt_mel = random_matrix(4, n_mels, rng);
    sp.target_mel = random_matrix(4, n_mels, rng);
    sp.target_text = t;
    sp.target_chars = tokenize(t);
    sp.prompt_text = "cab";
    sp.speaker_index = 0;
    c.speech.push_back(sp);

    TextPair tp;
    tp.caption = Caption{{0, 2, 1, 1}};
    tp.target_mel = random_matrix(4, n_mels, rng);
    tp.target_text = t;
    tp.target_chars = tokenize(t);
    tp.speaker_index = 0;
    c.text.push_back(tp);
  }
  return c;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

/// Central differences of `loss` against `analytic` for every element of
/// every trainable parameter. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult finite_difference_check(CastModel& model, const std::function<double()>& loss,
                                               const std::vector<Matrix>& analytic, double h = 1e-4,
                                               double floor = 1e-6) {
  GradCheckResult out;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    Param& p = model.params()[i];
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      const double up = loss();
      p.value[k] = orig - h;
      const double down = loss();
      p.value[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_param = p.name + "[" + std::to_string(k) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace cast::testing
