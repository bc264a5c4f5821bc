#include "cast/timbre.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cast/rng.hpp"

namespace cast {

const char* to_string(Modality m) { return m == Modality::Speech ? "speech" : "text"; }

void TimbreSeq::validate(int expected_dim) const {
  if (length() < 1) throw std::invalid_argument("timbre sequence is empty");
  if (dim() != expected_dim)
    throw std::invalid_argument("timbre width " + std::to_string(dim()) + " != " + std::to_string(expected_dim));
  if (!frames.all_finite()) throw std::invalid_argument("timbre sequence has non-finite values");
}

void Caption::validate() const {
  for (int i = 0; i < kNumAttributes; ++i) {
    const int lv = levels[static_cast<std::size_t>(i)];
    if (lv < 0 || lv >= kAttributeArity[static_cast<std::size_t>(i)])
      throw std::invalid_argument(std::string("caption level out of range for ") +
                                  kAttributeNames[static_cast<std::size_t>(i)] + ": " + std::to_string(lv));
  }
}

std::string Caption::to_string() const {
  std::ostringstream os;
  for (int i = 0; i < kNumAttributes; ++i) {
    if (i) os << ',';
    os << kAttributeNames[static_cast<std::size_t>(i)] << '=' << levels[static_cast<std::size_t>(i)];
  }
  return os.str();
}

Caption Caption::parse(std::string_view text) {
  Caption c;
  std::array<bool, kNumAttributes> seen{};
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, end - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw std::invalid_argument("caption item without '=': " + std::string(item));
    const std::string_view key = item.substr(0, eq);
    int idx = -1;
    for (int i = 0; i < kNumAttributes; ++i)
      if (key == kAttributeNames[static_cast<std::size_t>(i)]) idx = i;
    if (idx < 0) throw std::invalid_argument("unknown caption attribute: " + std::string(key));
    if (seen[static_cast<std::size_t>(idx)]) throw std::invalid_argument("duplicate caption attribute: " + std::string(key));
    seen[static_cast<std::size_t>(idx)] = true;
    c.levels[static_cast<std::size_t>(idx)] = std::stoi(std::string(item.substr(eq + 1)));
    pos = end + 1;
  }
  for (int i = 0; i < kNumAttributes; ++i)
    if (!seen[static_cast<std::size_t>(i)])
      throw std::invalid_argument(std::string("caption missing attribute: ") + kAttributeNames[static_cast<std::size_t>(i)]);
  c.validate();
  return c;
}

// ------------------------------------------------------------ speech branch

SpeechEncoder::SpeechEncoder(Matrix weight, Matrix bias, int chunk_size)
    : weight_(std::move(weight)), bias_(std::move(bias)), chunk_size_(chunk_size) {
  if (chunk_size_ < 1) throw std::invalid_argument("speech encoder chunk size must be >= 1");
  if (weight_.rows() % 2 != 0) throw std::invalid_argument("speech encoder expects mean+std features");
  if (bias_.rows() != 1 || bias_.cols() != weight_.cols()) throw std::invalid_argument("speech encoder bias shape");
}

SpeechEncoder SpeechEncoder::make_frozen(int n_mels, int dim, int chunk_size, std::uint64_t seed) {
  Rng rng(seed);
  const int in = 2 * n_mels;
  Matrix w(in, dim);
  const double gain = 2.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.values()) v = gain * rng.normal();
  Matrix b(1, dim);
  for (double& v : b.values()) v = 0.1 * rng.normal();
  round_to_float(w);
  round_to_float(b);
  return SpeechEncoder(std::move(w), std::move(b), chunk_size);
}

Matrix SpeechEncoder::chunk_features(const MelGrid& prompt) const {
  const int n_mels = weight_.rows() / 2;
  if (prompt.cols() != n_mels)
    throw std::invalid_argument("speech encoder expects " + std::to_string(n_mels) + " bins, got " +
                                std::to_string(prompt.cols()));
  const int chunks = prompt.rows() / chunk_size_;
  if (chunks < 1)
    throw std::invalid_argument("speech prompt has " + std::to_string(prompt.rows()) + " frames, fewer than one chunk of " +
                                std::to_string(chunk_size_));
  Matrix feats(chunks, 2 * n_mels);
  for (int k = 0; k < chunks; ++k) {
    for (int b = 0; b < n_mels; ++b) {
      double mean = 0.0;
      for (int t = 0; t < chunk_size_; ++t) mean += prompt(k * chunk_size_ + t, b);
      mean /= chunk_size_;
      double var = 0.0;
      for (int t = 0; t < chunk_size_; ++t) {
        const double d = prompt(k * chunk_size_ + t, b) - mean;
        var += d * d;
      }
      var /= chunk_size_;
      feats(k, b) = mean;
      feats(k, n_mels + b) = std::sqrt(var);
    }
  }
  return feats;
}

TimbreSeq SpeechEncoder::encode(const MelGrid& prompt) const {
  const Matrix feats = chunk_features(prompt);
  Matrix out(feats.rows(), weight_.cols());
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) = bias_(0, c);
  kernels::gemm_nn(feats, weight_, out);
  for (double& v : out.values()) v = std::tanh(v);
  return TimbreSeq{std::move(out), Modality::Speech};
}

// -------------------------------------------------------------- text branch

TextEncoder::TextEncoder(Matrix level_table, Matrix position_tags)
    : table_(std::move(level_table)), tags_(std::move(position_tags)) {
  int rows = 0;
  for (int a : kAttributeArity) rows += a;
  if (table_.rows() != rows) throw std::invalid_argument("text encoder table must have one row per attribute level");
  if (tags_.rows() != kNumAttributes || tags_.cols() != table_.cols())
    throw std::invalid_argument("text encoder position tags shape");
}

TextEncoder TextEncoder::make_frozen(int dim, std::uint64_t seed) {
  Rng rng(seed);
  int rows = 0;
  for (int a : kAttributeArity) rows += a;
  Matrix table(rows, dim);
  for (double& v : table.values()) v = rng.normal();
  Matrix tags(kNumAttributes, dim);
  for (double& v : tags.values()) v = 0.5 * rng.normal();
  round_to_float(table);
  round_to_float(tags);
  return TextEncoder(std::move(table), std::move(tags));
}

int TextEncoder::table_row(Attribute a, int level) {
  int row = 0;
  for (int i = 0; i < static_cast<int>(a); ++i) row += kAttributeArity[static_cast<std::size_t>(i)];
  return row + level;
}

Matrix TextEncoder::lookup(const Caption& caption) const {
  caption.validate();
  Matrix out(kNumAttributes, dim());
  for (int i = 0; i < kNumAttributes; ++i) {
    const int row = table_row(static_cast<Attribute>(i), caption.levels[static_cast<std::size_t>(i)]);
    for (int c = 0; c < dim(); ++c) out(i, c) = table_(row, c) + tags_(i, c);
  }
  return out;
}

Matrix TextEncoder::encode(const Caption& caption) const {
  const Matrix raw = lookup(caption);
  const Matrix mean = mean_rows(raw);
  Matrix out(raw.rows(), raw.cols());
  for (int r = 0; r < raw.rows(); ++r)
    for (int c = 0; c < raw.cols(); ++c) out(r, c) = 0.5 * raw(r, c) + 0.5 * mean(0, c);
  return out;
}

TimbreSeq project(const Matrix& text_embeds, const Matrix& weight, const Matrix& bias) {
  if (text_embeds.rows() < 1) throw std::invalid_argument("project: empty input");
  if (text_embeds.cols() != weight.rows()) throw std::invalid_argument("project: input width mismatch");
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw std::invalid_argument("project: bias shape");
  Matrix out(text_embeds.rows(), weight.cols());
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) = bias(0, c);
  kernels::gemm_nn(text_embeds, weight, out);
  return TimbreSeq{std::move(out), Modality::Text};
}

}  // namespace cast
