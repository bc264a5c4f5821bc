#include "cast/matrix.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cast {

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("matrix: negative dimension");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<int>(rows.size());
  cols_ = rows_ == 0 ? 0 : static_cast<int>(rows.begin()->size());
  data_.reserve(static_cast<std::size_t>(rows_) * cols_);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols_) throw std::invalid_argument("matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  Matrix m(1, static_cast<int>(values.size()));
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

std::string Matrix::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
  }
}

Matrix slice_rows(const Matrix& m, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > m.rows()) throw std::invalid_argument("slice_rows: out of range");
  Matrix out(count, m.cols());
  std::copy(m.row(begin), m.row(begin) + static_cast<std::size_t>(count) * m.cols(), out.row(0));
  return out;
}

Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) throw std::invalid_argument("concat_rows: column mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.values().begin(), top.values().end(), out.values().begin());
  std::copy(bottom.values().begin(), bottom.values().end(), out.values().begin() + top.size());
  return out;
}

Matrix mean_rows(const Matrix& m) {
  if (m.rows() == 0) throw std::invalid_argument("mean_rows: empty matrix");
  Matrix out(1, m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out(0, c) += m(r, c);
  for (int c = 0; c < m.cols(); ++c) out(0, c) /= m.rows();
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine_similarity: zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void round_to_float(Matrix& m) {
  for (double& v : m.values()) v = static_cast<double>(static_cast<float>(v));
}

namespace kernels {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const Matrix& m) { return ConstView(m.row(0), m.rows(), m.cols()); }
View view(Matrix& m) { return View(m.row(0), m.rows(), m.cols()); }

}  // namespace

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  if (b.rows() != a.cols() || c.rows() != a.rows() || c.cols() != b.cols())
    throw std::invalid_argument("gemm_nn: shape mismatch");
  if (a.empty() || b.empty()) return;
  view(c).noalias() += view(a) * view(b);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  if (b.cols() != a.cols() || c.rows() != a.rows() || c.cols() != b.rows())
    throw std::invalid_argument("gemm_nt: shape mismatch");
  if (a.empty() || b.empty()) return;
  view(c).noalias() += view(a) * view(b).transpose();
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  if (b.rows() != a.rows() || c.rows() != a.cols() || c.cols() != b.cols())
    throw std::invalid_argument("gemm_tn: shape mismatch");
  if (a.empty() || b.empty()) return;
  view(c).noalias() += view(a).transpose() * view(b);
}

}  // namespace kernels

}  // namespace cast
