#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cast {

/// Dense row-major matrix of doubles. Every sequence in the model is a
/// (positions x features) matrix; vectors are 1 x n.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix row_vector(std::span<const double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// Spectrogram-like grid: frames x mel bins.
using MelGrid = Matrix;

/// Throws std::invalid_argument naming `what` when shapes differ.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

Matrix slice_rows(const Matrix& m, int begin, int count);
Matrix concat_rows(const Matrix& top, const Matrix& bottom);
Matrix mean_rows(const Matrix& m);

double max_abs_diff(const Matrix& a, const Matrix& b);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Rounds every element to the nearest float32 value.
void round_to_float(Matrix& m);

namespace kernels {

// C += A * B
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c);
// C += A * B^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
// C += A^T * B
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);

}  // namespace kernels

}  // namespace cast
