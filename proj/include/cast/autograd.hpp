#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cast/matrix.hpp"

namespace cast {

struct Param;

namespace ag {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a single
/// reverse sweep visits every node after all of its consumers.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);
  /// Leaf that collects a gradient (when the tape records gradients).
  Var leaf(Matrix value, bool requires_grad = true);
  /// Leaf bound to parameter storage; repeated calls with the same index
  /// return the same node.
  Var param(const Param& p, std::size_t index);

  const Matrix& value(int id) const { return node(id).value(); }
  bool requires_grad(int id) const { return node(id).requires_grad; }

  /// Gradient of the last backward() target w.r.t. `v`; zeros if unreached.
  Matrix grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape. `loss` must be 1x1.
  void backward(Var loss);

  /// Adds the gradients of every parameter leaf into `sink[index]`.
  void accumulate_param_grads(std::span<Matrix> sink) const;

  std::size_t size() const { return nodes_.size(); }

  // -- op authoring interface --
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  /// Accumulation buffer for node `id`, zero-initialized on first use.
  Matrix& grad_buffer(int id);

 private:
  struct Node {
    Matrix owned;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool requires_grad = false;
    long param_index = -1;
    BackwardFn backward;

    const Matrix& value() const { return borrowed ? *borrowed : owned; }
  };

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  Var append(Node n);

  std::deque<Node> nodes_;
  std::unordered_map<std::size_t, int> param_nodes_;
  bool grad_enabled_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

// ---- differentiable operations ----

Var matmul(Var a, Var b);
/// x * w + bias; `bias` may be an invalid Var for no bias. w is (in x out).
Var linear(Var x, Var w, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a + r, r broadcast over rows (r is 1 x cols).
Var add_row(Var a, Var r);
/// a * r elementwise, r broadcast over rows.
Var mul_row(Var a, Var r);
/// x * (1 + scale) + shift with 1 x cols modulation rows.
Var modulate(Var x, Var shift, Var scale);
/// Per-row normalization without affine parameters.
Var layer_norm(Var x, double eps = 1e-6);
Var gelu(Var x);
Var silu(Var x);
Var tanh(Var x);
Var concat_rows(Var top, Var bottom);
Var concat_cols(Var left, Var right);
Var slice_rows(Var x, int begin, int count);
Var slice_cols(Var x, int begin, int count);
Var repeat_row(Var r, int times);
/// Rows of `table` selected by `ids`.
Var embedding(Var table, std::span<const int> ids);
/// Multi-head scaled dot-product attention; heads occupy contiguous
/// column blocks of q/k/v.
Var attention(Var q, Var k, Var v, int heads);
/// Rotary position rotation of the first `n_rows` rows (position = row
/// index), pairwise within each head's column block.
Var rope(Var x, int heads, int n_rows);
/// Depthwise 1-D convolution along rows, same padding. w is (kernel x C).
Var depthwise_conv1d(Var x, Var w, Var bias);
/// Global response normalization across rows with gamma/beta (1 x C).
Var global_response_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
/// Mean squared error over rows where mask is true; returns 1x1.
Var masked_mse(Var pred, const Matrix& target, const std::vector<bool>& mask);

double scalar(Var v);

}  // namespace ag
}  // namespace cast
