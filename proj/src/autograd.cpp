#include "cast/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cast/params.hpp"

namespace cast::ag {

namespace {

void check(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + detail);
}

void check_same(const Matrix& a, const Matrix& b, const char* op) {
  check(a.same_shape(b), op, "shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

void check_row(const Matrix& a, const Matrix& r, const char* op) {
  check(r.rows() == 1 && r.cols() == a.cols(), op,
        "expected 1x" + std::to_string(a.cols()) + " row, got " + r.shape_string());
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("invalid Var");
  return *a.tape;
}

Matrix extract_cols(const Matrix& m, int c0, int width) {
  Matrix out(m.rows(), width);
  for (int r = 0; r < m.rows(); ++r) std::copy(m.row(r) + c0, m.row(r) + c0 + width, out.row(r));
  return out;
}

void add_cols(Matrix& dst, const Matrix& src, int c0) {
  for (int r = 0; r < src.rows(); ++r) {
    double* d = dst.row(r) + c0;
    const double* s = src.row(r);
    for (int c = 0; c < src.cols(); ++c) d[c] += s[c];
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------- tape

Var Tape::append(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return append(std::move(n));
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  return append(std::move(n));
}

Var Tape::param(const Param& p, std::size_t index) {
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.borrowed = &p.value;
  n.requires_grad = grad_enabled_ && p.trainable;
  n.param_index = static_cast<long>(index);
  Var v = append(std::move(n));
  param_nodes_.emplace(index, v.id);
  return v;
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.valid() && node(in.id).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return append(std::move(n));
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = node(id);
  if (n.grad.empty() && !n.value().empty()) n.grad = Matrix(n.value().rows(), n.value().cols());
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = node(v.id);
  if (n.grad.empty()) return Matrix(n.value().rows(), n.value().cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: Var from another tape");
  const Matrix& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  if (!node(loss.id).requires_grad) return;
  grad_buffer(loss.id)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::accumulate_param_grads(std::span<Matrix> sink) const {
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || n.grad.empty()) continue;
    Matrix& dst = sink[static_cast<std::size_t>(n.param_index)];
    add_into(dst, n.grad);
  }
}

// ---------------------------------------------------------------- ops

double scalar(Var v) {
  const Matrix& m = v.value();
  if (m.size() != 1) throw std::invalid_argument("scalar: expected 1x1");
  return m[0];
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check(av.cols() == bv.rows(), "matmul", av.shape_string() + " * " + bv.shape_string());
  Matrix out(av.rows(), bv.cols());
  kernels::gemm_nn(av, bv, out);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) kernels::gemm_nt(g, tp.value(b.id), tp.grad_buffer(a.id));
    if (tp.requires_grad(b.id)) kernels::gemm_tn(tp.value(a.id), g, tp.grad_buffer(b.id));
  });
}

Var linear(Var x, Var w, Var bias) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  check(xv.cols() == wv.rows(), "linear", xv.shape_string() + " * " + wv.shape_string());
  Matrix out(xv.rows(), wv.cols());
  if (bias.valid()) {
    const Matrix& bv = bias.value();
    check_row(out, bv, "linear");
    for (int r = 0; r < out.rows(); ++r) std::copy(bv.row(0), bv.row(0) + bv.cols(), out.row(r));
  }
  kernels::gemm_nn(xv, wv, out);
  return t.push(std::move(out), {x, w, bias}, [x, w, bias](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(x.id)) kernels::gemm_nt(g, tp.value(w.id), tp.grad_buffer(x.id));
    if (tp.requires_grad(w.id)) kernels::gemm_tn(tp.value(x.id), g, tp.grad_buffer(w.id));
    if (bias.valid() && tp.requires_grad(bias.id)) {
      Matrix& gb = tp.grad_buffer(bias.id);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    }
  });
}

Var add(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_same(av, bv, "add");
  Matrix out = av;
  add_into(out, bv);
  return tape_of(a).push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) add_into(tp.grad_buffer(a.id), g);
    if (tp.requires_grad(b.id)) add_into(tp.grad_buffer(b.id), g);
  });
}

Var sub(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_same(av, bv, "sub");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape_of(a).push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) add_into(tp.grad_buffer(a.id), g);
    if (tp.requires_grad(b.id)) {
      Matrix& gb = tp.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_same(av, bv, "mul");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape_of(a).push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) {
      Matrix& ga = tp.grad_buffer(a.id);
      const Matrix& bv2 = tp.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.requires_grad(b.id)) {
      Matrix& gb = tp.grad_buffer(b.id);
      const Matrix& av2 = tp.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= s;
  return tape_of(a).push(std::move(out), {a}, [a, s](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v += s;
  return tape_of(a).push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) { add_into(tp.grad_buffer(a.id), g); });
}

Var add_row(Var a, Var r) {
  const Matrix& av = a.value();
  const Matrix& rv = r.value();
  check_row(av, rv, "add_row");
  Matrix out = av;
  for (int i = 0; i < out.rows(); ++i)
    for (int c = 0; c < out.cols(); ++c) out(i, c) += rv(0, c);
  return tape_of(a).push(std::move(out), {a, r}, [a, r](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) add_into(tp.grad_buffer(a.id), g);
    if (tp.requires_grad(r.id)) {
      Matrix& gr = tp.grad_buffer(r.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gr(0, c) += g(i, c);
    }
  });
}

Var mul_row(Var a, Var r) {
  const Matrix& av = a.value();
  const Matrix& rv = r.value();
  check_row(av, rv, "mul_row");
  Matrix out = av;
  for (int i = 0; i < out.rows(); ++i)
    for (int c = 0; c < out.cols(); ++c) out(i, c) *= rv(0, c);
  return tape_of(a).push(std::move(out), {a, r}, [a, r](Tape& tp, const Matrix& g) {
    const Matrix& rv2 = tp.value(r.id);
    if (tp.requires_grad(a.id)) {
      Matrix& ga = tp.grad_buffer(a.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) ga(i, c) += g(i, c) * rv2(0, c);
    }
    if (tp.requires_grad(r.id)) {
      const Matrix& av2 = tp.value(a.id);
      Matrix& gr = tp.grad_buffer(r.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gr(0, c) += g(i, c) * av2(i, c);
    }
  });
}

Var modulate(Var x, Var shift, Var scale_row) {
  const Matrix& xv = x.value();
  check_row(xv, shift.value(), "modulate");
  check_row(xv, scale_row.value(), "modulate");
  const Matrix& sh = shift.value();
  const Matrix& sc = scale_row.value();
  Matrix out(xv.rows(), xv.cols());
  for (int i = 0; i < xv.rows(); ++i)
    for (int c = 0; c < xv.cols(); ++c) out(i, c) = xv(i, c) * (1.0 + sc(0, c)) + sh(0, c);
  return tape_of(x).push(std::move(out), {x, shift, scale_row}, [x, shift, scale_row](Tape& tp, const Matrix& g) {
    const Matrix& xv2 = tp.value(x.id);
    const Matrix& sc2 = tp.value(scale_row.id);
    if (tp.requires_grad(x.id)) {
      Matrix& gx = tp.grad_buffer(x.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gx(i, c) += g(i, c) * (1.0 + sc2(0, c));
    }
    if (tp.requires_grad(shift.id)) {
      Matrix& gs = tp.grad_buffer(shift.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gs(0, c) += g(i, c);
    }
    if (tp.requires_grad(scale_row.id)) {
      Matrix& gs = tp.grad_buffer(scale_row.id);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gs(0, c) += g(i, c) * xv2(i, c);
    }
  });
}

Var layer_norm(Var x, double eps) {
  const Matrix& xv = x.value();
  const int n = xv.cols();
  check(n > 0, "layer_norm", "zero columns");
  Matrix out(xv.rows(), n);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(xv.rows()));
  for (int i = 0; i < xv.rows(); ++i) {
    const double* xr = xv.row(i);
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += xr[c];
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    double* o = out.row(i);
    for (int c = 0; c < n; ++c) o[c] = (xr[c] - mean) * is;
  }
  auto normalized = std::make_shared<Matrix>(out);
  return tape_of(x).push(std::move(out), {x}, [x, normalized, inv_std, n](Tape& tp, const Matrix& g) {
    const Matrix& yv = *normalized;
    Matrix& gx = tp.grad_buffer(x.id);
    for (int i = 0; i < g.rows(); ++i) {
      const double* gr = g.row(i);
      const double* yr = yv.row(i);
      double mean_g = 0.0, mean_gy = 0.0;
      for (int c = 0; c < n; ++c) {
        mean_g += gr[c];
        mean_gy += gr[c] * yr[c];
      }
      mean_g /= n;
      mean_gy /= n;
      const double is = (*inv_std)[static_cast<std::size_t>(i)];
      double* gxr = gx.row(i);
      for (int c = 0; c < n; ++c) gxr[c] += is * (gr[c] - mean_g - yr[c] * mean_gy);
    }
  });
}

Var gelu(Var x) {
  Matrix out = x.value();
  for (double& v : out.values()) v = gelu_value(v);
  return tape_of(x).push(std::move(out), {x}, [x](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(x.id);
    Matrix& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_grad(xv[i]);
  });
}

Var silu(Var x) {
  Matrix out = x.value();
  for (double& v : out.values()) v = v * sigmoid(v);
  return tape_of(x).push(std::move(out), {x}, [x](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(x.id);
    Matrix& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(xv[i]);
      gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

Var tanh(Var x) {
  Matrix out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  auto y = std::make_shared<Matrix>(out);
  return tape_of(x).push(std::move(out), {x}, [x, y](Tape& tp, const Matrix& g) {
    const Matrix& yv = *y;
    Matrix& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
  });
}

Var concat_rows(Var top, Var bottom) {
  const Matrix& a = top.value();
  const Matrix& b = bottom.value();
  check(a.cols() == b.cols(), "concat_rows", a.shape_string() + " / " + b.shape_string());
  const int split = a.rows();
  return tape_of(top).push(cast::concat_rows(a, b), {top, bottom}, [top, bottom, split](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(top.id)) add_into(tp.grad_buffer(top.id), cast::slice_rows(g, 0, split));
    if (tp.requires_grad(bottom.id))
      add_into(tp.grad_buffer(bottom.id), cast::slice_rows(g, split, g.rows() - split));
  });
}

Var concat_cols(Var left, Var right) {
  const Matrix& a = left.value();
  const Matrix& b = right.value();
  check(a.rows() == b.rows(), "concat_cols", a.shape_string() + " | " + b.shape_string());
  Matrix out(a.rows(), a.cols() + b.cols());
  for (int r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r), a.row(r) + a.cols(), out.row(r));
    std::copy(b.row(r), b.row(r) + b.cols(), out.row(r) + a.cols());
  }
  const int split = a.cols();
  return tape_of(left).push(std::move(out), {left, right}, [left, right, split](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(left.id)) add_into(tp.grad_buffer(left.id), extract_cols(g, 0, split));
    if (tp.requires_grad(right.id))
      add_into(tp.grad_buffer(right.id), extract_cols(g, split, g.cols() - split));
  });
}

Var slice_rows(Var x, int begin, int count) {
  return tape_of(x).push(cast::slice_rows(x.value(), begin, count), {x}, [x, begin](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad_buffer(x.id);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) gx(begin + r, c) += g(r, c);
  });
}

Var slice_cols(Var x, int begin, int count) {
  const Matrix& xv = x.value();
  check(begin >= 0 && count >= 0 && begin + count <= xv.cols(), "slice_cols", "range out of bounds");
  return tape_of(x).push(extract_cols(xv, begin, count), {x}, [x, begin](Tape& tp, const Matrix& g) {
    add_cols(tp.grad_buffer(x.id), g, begin);
  });
}

Var repeat_row(Var r, int times) {
  const Matrix& rv = r.value();
  check(rv.rows() == 1, "repeat_row", "expected a single row");
  check(times >= 1, "repeat_row", "times must be positive");
  Matrix out(times, rv.cols());
  for (int i = 0; i < times; ++i) std::copy(rv.row(0), rv.row(0) + rv.cols(), out.row(i));
  return tape_of(r).push(std::move(out), {r}, [r](Tape& tp, const Matrix& g) {
    Matrix& gr = tp.grad_buffer(r.id);
    for (int i = 0; i < g.rows(); ++i)
      for (int c = 0; c < g.cols(); ++c) gr(0, c) += g(i, c);
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<int>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < tv.rows(), "embedding", "id " + std::to_string(ids[i]) + " out of range");
    std::copy(tv.row(ids[i]), tv.row(ids[i]) + tv.cols(), out.row(static_cast<int>(i)));
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return tape_of(table).push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix& gt = tp.grad_buffer(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int c = 0; c < g.cols(); ++c) gt(idx[i], c) += g(static_cast<int>(i), c);
  });
}

Var attention(Var q, Var k, Var v, int heads) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  check(heads >= 1 && qv.cols() % heads == 0, "attention", "width not divisible by heads");
  check(kv.same_shape(vv), "attention", "key/value shape mismatch");
  check(qv.cols() == kv.cols(), "attention", "query/key width mismatch");
  check(kv.rows() >= 1, "attention", "empty key sequence");
  const int dh = qv.cols() / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(heads));
  Matrix out(qv.rows(), qv.cols());
  for (int h = 0; h < heads; ++h) {
    const Matrix qh = extract_cols(qv, h * dh, dh);
    const Matrix kh = extract_cols(kv, h * dh, dh);
    const Matrix vh = extract_cols(vv, h * dh, dh);
    Matrix s(qh.rows(), kh.rows());
    kernels::gemm_nt(qh, kh, s);
    for (int i = 0; i < s.rows(); ++i) {
      double* sr = s.row(i);
      double mx = -INFINITY;
      for (int j = 0; j < s.cols(); ++j) {
        sr[j] *= sc;
        mx = std::max(mx, sr[j]);
      }
      double total = 0.0;
      for (int j = 0; j < s.cols(); ++j) {
        sr[j] = std::exp(sr[j] - mx);
        total += sr[j];
      }
      for (int j = 0; j < s.cols(); ++j) sr[j] /= total;
    }
    Matrix oh(qh.rows(), dh);
    kernels::gemm_nn(s, vh, oh);
    add_cols(out, oh, h * dh);
    probs->push_back(std::move(s));
  }
  return tape_of(q).push(std::move(out), {q, k, v}, [q, k, v, heads, dh, sc, probs](Tape& tp, const Matrix& g) {
    const bool need_q = tp.requires_grad(q.id);
    const bool need_k = tp.requires_grad(k.id);
    const bool need_v = tp.requires_grad(v.id);
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = (*probs)[static_cast<std::size_t>(h)];
      const Matrix gh = extract_cols(g, h * dh, dh);
      if (need_v) {
        Matrix gv(p.cols(), dh);
        kernels::gemm_tn(p, gh, gv);
        add_cols(tp.grad_buffer(v.id), gv, h * dh);
      }
      if (!need_q && !need_k) continue;
      const Matrix vh = extract_cols(tp.value(v.id), h * dh, dh);
      Matrix dp(p.rows(), p.cols());
      kernels::gemm_nt(gh, vh, dp);
      for (int i = 0; i < dp.rows(); ++i) {
        double* dr = dp.row(i);
        const double* pr = p.row(i);
        double dot = 0.0;
        for (int j = 0; j < dp.cols(); ++j) dot += dr[j] * pr[j];
        for (int j = 0; j < dp.cols(); ++j) dr[j] = pr[j] * (dr[j] - dot) * sc;
      }
      if (need_q) {
        const Matrix kh = extract_cols(tp.value(k.id), h * dh, dh);
        Matrix gq(p.rows(), dh);
        kernels::gemm_nn(dp, kh, gq);
        add_cols(tp.grad_buffer(q.id), gq, h * dh);
      }
      if (need_k) {
        const Matrix qh = extract_cols(tp.value(q.id), h * dh, dh);
        Matrix gk(p.cols(), dh);
        kernels::gemm_tn(dp, qh, gk);
        add_cols(tp.grad_buffer(k.id), gk, h * dh);
      }
    }
  });
}

namespace {

struct RopeTable {
  std::vector<double> cos, sin;  // [n_rows][dh/2]
};

std::shared_ptr<RopeTable> make_rope_table(int n_rows, int dh) {
  auto t = std::make_shared<RopeTable>();
  const int half = dh / 2;
  t->cos.resize(static_cast<std::size_t>(n_rows) * half);
  t->sin.resize(static_cast<std::size_t>(n_rows) * half);
  for (int r = 0; r < n_rows; ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / dh);
      const double angle = r * freq;
      t->cos[static_cast<std::size_t>(r) * half + i] = std::cos(angle);
      t->sin[static_cast<std::size_t>(r) * half + i] = std::sin(angle);
    }
  }
  return t;
}

void apply_rope(const Matrix& in, Matrix& out, const RopeTable& t, int heads, int n_rows, bool inverse) {
  const int dh = in.cols() / heads;
  const int half = dh / 2;
  for (int r = 0; r < n_rows; ++r) {
    const double* x = in.row(r);
    double* y = out.row(r);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < half; ++i) {
        const double c = t.cos[static_cast<std::size_t>(r) * half + i];
        const double s = inverse ? -t.sin[static_cast<std::size_t>(r) * half + i]
                                 : t.sin[static_cast<std::size_t>(r) * half + i];
        const int a = h * dh + 2 * i;
        y[a] += c * x[a] - s * x[a + 1];
        y[a + 1] += s * x[a] + c * x[a + 1];
      }
    }
  }
  for (int r = n_rows; r < in.rows(); ++r)
    for (int c = 0; c < in.cols(); ++c) out(r, c) += in(r, c);
}

}  // namespace

Var rope(Var x, int heads, int n_rows) {
  const Matrix& xv = x.value();
  check(heads >= 1 && xv.cols() % heads == 0 && (xv.cols() / heads) % 2 == 0, "rope", "head width must be even");
  check(n_rows >= 0 && n_rows <= xv.rows(), "rope", "rotated rows out of range");
  auto table = make_rope_table(n_rows, xv.cols() / heads);
  Matrix out(xv.rows(), xv.cols());
  apply_rope(xv, out, *table, heads, n_rows, false);
  return tape_of(x).push(std::move(out), {x}, [x, heads, n_rows, table](Tape& tp, const Matrix& g) {
    apply_rope(g, tp.grad_buffer(x.id), *table, heads, n_rows, true);
  });
}

Var depthwise_conv1d(Var x, Var w, Var bias) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  check(wv.cols() == xv.cols(), "depthwise_conv1d", "channel mismatch");
  check(wv.rows() % 2 == 1, "depthwise_conv1d", "kernel size must be odd");
  const Matrix& bv = bias.value();
  check_row(xv, bv, "depthwise_conv1d");
  const int len = xv.rows(), ch = xv.cols(), ks = wv.rows(), pad = ks / 2;
  Matrix out(len, ch);
  for (int t = 0; t < len; ++t) {
    double* o = out.row(t);
    for (int c = 0; c < ch; ++c) o[c] = bv(0, c);
    for (int j = 0; j < ks; ++j) {
      const int src = t + j - pad;
      if (src < 0 || src >= len) continue;
      const double* xr = xv.row(src);
      const double* wr = wv.row(j);
      for (int c = 0; c < ch; ++c) o[c] += wr[c] * xr[c];
    }
  }
  return tape_of(x).push(std::move(out), {x, w, bias}, [x, w, bias, len, ch, ks, pad](Tape& tp, const Matrix& g) {
    const Matrix& xv2 = tp.value(x.id);
    const Matrix& wv2 = tp.value(w.id);
    const bool nx = tp.requires_grad(x.id), nw = tp.requires_grad(w.id);
    Matrix* gx = nx ? &tp.grad_buffer(x.id) : nullptr;
    Matrix* gw = nw ? &tp.grad_buffer(w.id) : nullptr;
    for (int t = 0; t < len; ++t) {
      const double* gr = g.row(t);
      for (int j = 0; j < ks; ++j) {
        const int src = t + j - pad;
        if (src < 0 || src >= len) continue;
        if (gx) {
          double* gxr = gx->row(src);
          const double* wr = wv2.row(j);
          for (int c = 0; c < ch; ++c) gxr[c] += gr[c] * wr[c];
        }
        if (gw) {
          double* gwr = gw->row(j);
          const double* xr = xv2.row(src);
          for (int c = 0; c < ch; ++c) gwr[c] += gr[c] * xr[c];
        }
      }
    }
    if (tp.requires_grad(bias.id)) {
      Matrix& gb = tp.grad_buffer(bias.id);
      for (int t = 0; t < len; ++t)
        for (int c = 0; c < ch; ++c) gb(0, c) += g(t, c);
    }
  });
}

Var global_response_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  check_row(xv, gamma.value(), "global_response_norm");
  check_row(xv, beta.value(), "global_response_norm");
  const int len = xv.rows(), ch = xv.cols();
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ch), 0.0);
  for (int t = 0; t < len; ++t)
    for (int c = 0; c < ch; ++c) (*norms)[static_cast<std::size_t>(c)] += xv(t, c) * xv(t, c);
  double mean_norm = 0.0;
  for (double& n : *norms) {
    n = std::sqrt(n);
    mean_norm += n;
  }
  mean_norm /= ch;
  const double denom = mean_norm + eps;
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  Matrix out(len, ch);
  for (int t = 0; t < len; ++t)
    for (int c = 0; c < ch; ++c) {
      const double nx = (*norms)[static_cast<std::size_t>(c)] / denom;
      out(t, c) = gv(0, c) * xv(t, c) * nx + bv(0, c) + xv(t, c);
    }
  return tape_of(x).push(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, norms, denom, len, ch](Tape& tp, const Matrix& g) {
    const Matrix& xv2 = tp.value(x.id);
    const Matrix& gv2 = tp.value(gamma.id);
    const auto& nrm = *norms;
    if (tp.requires_grad(gamma.id)) {
      Matrix& gg = tp.grad_buffer(gamma.id);
      for (int t = 0; t < len; ++t)
        for (int c = 0; c < ch; ++c) gg(0, c) += g(t, c) * xv2(t, c) * nrm[static_cast<std::size_t>(c)] / denom;
    }
    if (tp.requires_grad(beta.id)) {
      Matrix& gb = tp.grad_buffer(beta.id);
      for (int t = 0; t < len; ++t)
        for (int c = 0; c < ch; ++c) gb(0, c) += g(t, c);
    }
    if (!tp.requires_grad(x.id)) return;
    // d/dn_c of the loss, then back through n_c = g_c / (mean(g) + eps).
    std::vector<double> dn(static_cast<std::size_t>(ch), 0.0);
    for (int t = 0; t < len; ++t)
      for (int c = 0; c < ch; ++c) dn[static_cast<std::size_t>(c)] += g(t, c) * gv2(0, c) * xv2(t, c);
    double cross = 0.0;
    for (int c = 0; c < ch; ++c) cross += dn[static_cast<std::size_t>(c)] * nrm[static_cast<std::size_t>(c)];
    cross /= denom * denom * ch;
    Matrix& gx = tp.grad_buffer(x.id);
    for (int c = 0; c < ch; ++c) {
      const double gnorm = dn[static_cast<std::size_t>(c)] / denom - cross;
      const double nc = nrm[static_cast<std::size_t>(c)];
      const double direct = gv2(0, c) * nc / denom + 1.0;
      for (int t = 0; t < len; ++t) {
        double d = g(t, c) * direct;
        if (nc > 0.0) d += gnorm * xv2(t, c) / nc;
        gx(t, c) += d;
      }
    }
  });
}

Var masked_mse(Var pred, const Matrix& target, const std::vector<bool>& mask) {
  const Matrix& pv = pred.value();
  check_same(pv, target, "masked_mse");
  check(static_cast<int>(mask.size()) == pv.rows(), "masked_mse", "mask length differs from frame count");
  int valid = 0;
  for (bool m : mask) valid += m ? 1 : 0;
  check(valid > 0, "masked_mse", "mask selects no frames");
  const double norm = 1.0 / (static_cast<double>(valid) * pv.cols());
  double total = 0.0;
  for (int r = 0; r < pv.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    for (int c = 0; c < pv.cols(); ++c) {
      const double d = pv(r, c) - target(r, c);
      total += d * d;
    }
  }
  Matrix out(1, 1, total * norm);
  return tape_of(pred).push(std::move(out), {pred}, [pred, target, mask, norm](Tape& tp, const Matrix& g) {
    const Matrix& pv2 = tp.value(pred.id);
    Matrix& gp = tp.grad_buffer(pred.id);
    const double s = 2.0 * norm * g(0, 0);
    for (int r = 0; r < pv2.rows(); ++r) {
      if (!mask[static_cast<std::size_t>(r)]) continue;
      for (int c = 0; c < pv2.cols(); ++c) gp(r, c) += s * (pv2(r, c) - target(r, c));
    }
  });
}

}  // namespace cast::ag
