#include "calibflow/tape.hpp"

#include <algorithm>
#include <cmath>

#include "calibflow/errors.hpp"

namespace calibflow {
namespace {

enum class BroadcastKind { same, b_scalar, a_scalar, b_row };

BroadcastKind classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return BroadcastKind::same;
  if (b.is_scalar()) return BroadcastKind::b_scalar;
  if (a.is_scalar()) return BroadcastKind::a_scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return BroadcastKind::b_row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

double b_value(BroadcastKind k, const Tensor& b, std::size_t i, std::size_t cols) {
  switch (k) {
    case BroadcastKind::same: return b.data[i];
    case BroadcastKind::b_scalar: return b.data[0];
    case BroadcastKind::a_scalar: return b.data[i];
    case BroadcastKind::b_row: return b.data[i % cols];
  }
  return 0.0;
}

}  // namespace

void Tape::check_open(const char* op) const {
  if (consumed_) throw NumericError(std::string(op) + ": tape already consumed by backward; reset() first");
}

Var Tape::push(Tensor val, std::vector<int> parents, std::function<void(Tape&, int)> back, std::string pname) {
  Node n;
  n.val = std::move(val);
  n.parents = std::move(parents);
  n.back = std::move(back);
  n.pname = std::move(pname);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor v) {
  check_open("constant");
  return push(std::move(v), {}, nullptr);
}

Var Tape::param(const std::string& name, const Tensor& value) {
  check_open("param");
  if (name.empty()) throw NumericError("param: empty name");
  return push(value, {}, nullptr, name);
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).val; }

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

Tensor& Tape::grad_slot(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.val.shape);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accum(int id, const Tensor& g) {
  Tensor& slot = grad_slot(id);
  for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
}

void Tape::accum_scaled(int id, const Tensor& g, double s) {
  Tensor& slot = grad_slot(id);
  for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += s * g.data[i];
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.has_grad) throw NumericError("grad: no gradient recorded for this var");
  return n.grad;
}

// ---- elementwise binary ----

Var Tape::add(Var a, Var b) {
  check_open("add");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const BroadcastKind k = classify("add", A, B);
  if (k == BroadcastKind::a_scalar) return add(b, a);
  Tensor out = A;
  const std::size_t cols = A.cols();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b_value(k, B, i, cols);
  return push(std::move(out), {a.id, b.id}, [k](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accum(n.parents[0], n.grad);
    Tensor& gb = t.grad_slot(n.parents[1]);
    const std::size_t cols = t.nodes_[n.parents[0]].val.cols();
    if (k == BroadcastKind::same) {
      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += n.grad.data[i];
    } else if (k == BroadcastKind::b_scalar) {
      for (double g : n.grad.data) gb.data[0] += g;
    } else {  // b_row
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) gb.data[i % cols] += n.grad.data[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  check_open("sub");
  Var nb = affine(b, -1.0, 0.0);
  return add(a, nb);
}

Var Tape::mul(Var a, Var b) {
  check_open("mul");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const BroadcastKind k = classify("mul", A, B);
  if (k == BroadcastKind::a_scalar) return mul(b, a);
  Tensor out = A;
  const std::size_t cols = A.cols();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b_value(k, B, i, cols);
  return push(std::move(out), {a.id, b.id}, [k](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& A = t.nodes_[n.parents[0]].val;
    const Tensor& B = t.nodes_[n.parents[1]].val;
    Tensor& ga = t.grad_slot(n.parents[0]);
    Tensor& gb = t.grad_slot(n.parents[1]);
    const std::size_t cols = A.cols();
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
      const double g = n.grad.data[i];
      const double bv = b_value(k, B, i, cols);
      ga.data[i] += g * bv;
      if (k == BroadcastKind::same) gb.data[i] += g * A.data[i];
      else if (k == BroadcastKind::b_scalar) gb.data[0] += g * A.data[i];
      else gb.data[i % cols] += g * A.data[i];
    }
  });
}

Var Tape::affine(Var a, double scale, double shift) {
  check_open("affine");
  Tensor out = value(a);
  for (double& v : out.data) v = scale * v + shift;
  return push(std::move(out), {a.id}, [scale](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accum_scaled(n.parents[0], n.grad, scale);
  });
}

// ---- elementwise unary ----

namespace {
template <class F, class DF>
Var unary(Tape& t, Var a, const Tensor& A, F f, DF df,
          Var (Tape::*)(Var)) {
  (void)df;
  (void)f;
  (void)t;
  (void)a;
  (void)A;
  return Var{};
}
}  // namespace

Var Tape::exp(Var a) {
  check_open("exp");
  Tensor out = value(a);
  for (double& v : out.data) v = std::exp(v);
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) ga.data[i] += n.grad.data[i] * n.val.data[i];
  });
}

Var Tape::log(Var a) {
  check_open("log");
  Tensor out = value(a);
  for (double& v : out.data) v = std::log(v);
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& A = t.nodes_[n.parents[0]].val;
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) ga.data[i] += n.grad.data[i] / A.data[i];
  });
}

Var Tape::sqrt(Var a) {
  check_open("sqrt");
  Tensor out = value(a);
  for (double& v : out.data) v = std::sqrt(v);
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      ga.data[i] += n.grad.data[i] * 0.5 / n.val.data[i];
  });
}

Var Tape::relu(Var a) {
  check_open("relu");
  Tensor out = value(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& A = t.nodes_[n.parents[0]].val;
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      if (A.data[i] > 0.0) ga.data[i] += n.grad.data[i];
  });
}

Var Tape::tanh(Var a) {
  check_open("tanh");
  Tensor out = value(a);
  for (double& v : out.data) v = std::tanh(v);
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      ga.data[i] += n.grad.data[i] * (1.0 - n.val.data[i] * n.val.data[i]);
  });
}

Var Tape::softplus(Var a) {
  check_open("softplus");
  Tensor out = value(a);
  // log1p(exp(x)) with the large-x branch to avoid overflow
  for (double& v : out.data) v = v > 30.0 ? v : std::log1p(std::exp(v));
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& A = t.nodes_[n.parents[0]].val;
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      ga.data[i] += n.grad.data[i] / (1.0 + std::exp(-A.data[i]));
  });
}

namespace {
Var minmax_impl(Tape& t, Var a, Var b, bool take_min, const char* op,
                const Tensor& A, const Tensor& B,
                Var (Tape::*)(Var, Var)) {
  (void)t;
  (void)a;
  (void)b;
  (void)take_min;
  (void)op;
  (void)A;
  (void)B;
  return Var{};
}
}  // namespace

Var Tape::emin(Var a, Var b) {
  check_open("emin");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw ShapeError("emin: shapes " + A.shape_str() + " vs " + B.shape_str());
  Tensor out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(A.data[i], B.data[i]);
  return push(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& A = t.nodes_[n.parents[0]].val;
    const Tensor& B = t.nodes_[n.parents[1]].val;
    Tensor& ga = t.grad_slot(n.parents[0]);
    Tensor& gb = t.grad_slot(n.parents[1]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
      // ties go to the first operand
      if (A.data[i] <= B.data[i]) ga.data[i] += n.grad.data[i];
      else gb.data[i] += n.grad.data[i];
    }
  });
}

Var Tape::emax(Var a, Var b) {
  check_open("emax");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw ShapeError("emax: shapes " + A.shape_str() + " vs " + B.shape_str());
  Tensor out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(A.data[i], B.data[i]);
  return push(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& A = t.nodes_[n.parents[0]].val;
    const Tensor& B = t.nodes_[n.parents[1]].val;
    Tensor& ga = t.grad_slot(n.parents[0]);
    Tensor& gb = t.grad_slot(n.parents[1]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
      if (A.data[i] >= B.data[i]) ga.data[i] += n.grad.data[i];
      else gb.data[i] += n.grad.data[i];
    }
  });
}

// ---- structure ----

Var Tape::matmul(Var a, Var b) {
  check_open("matmul");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
    throw ShapeError("matmul: shapes " + A.shape_str() + " x " + B.shape_str());
  const std::size_t R = A.shape[0], K = A.shape[1], C = B.shape[1];
  Tensor out({R, C}, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t k = 0; k < K; ++k) {
      const double av = A.data[r * K + k];
      if (av == 0.0) continue;
      const double* brow = &B.data[k * C];
      double* orow = &out.data[r * C];
      for (std::size_t c = 0; c < C; ++c) orow[c] += av * brow[c];
    }
  return push(std::move(out), {a.id, b.id}, [R, K, C](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Tensor& A = t.nodes_[n.parents[0]].val;
    const Tensor& B = t.nodes_[n.parents[1]].val;
    Tensor& ga = t.grad_slot(n.parents[0]);
    Tensor& gb = t.grad_slot(n.parents[1]);
    // dA = G B^T
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double g = n.grad.data[r * C + c];
        if (g == 0.0) continue;
        const double* brow = &B.data[c];  // column c
        double* garow = &ga.data[r * K];
        for (std::size_t k = 0; k < K; ++k) garow[k] += g * brow[k * C];
      }
    // dB = A^T G
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t k = 0; k < K; ++k) {
        const double av = A.data[r * K + k];
        if (av == 0.0) continue;
        const double* grow = &n.grad.data[r * C];
        double* gbrow = &gb.data[k * C];
        for (std::size_t c = 0; c < C; ++c) gbrow[c] += av * grow[c];
      }
  });
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> idx) {
  check_open("gather_rows");
  const Tensor& A = value(a);
  const std::size_t C = A.cols(), R = A.rows();
  for (std::size_t i : idx)
    if (i >= R) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " + std::to_string(R) + " rows");
  Tensor out({idx.size(), C});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(&A.data[idx[r] * C], C, &out.data[r * C]);
  return push(std::move(out), {a.id}, [idx = std::move(idx), C](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < C; ++c) ga.data[idx[r] * C + c] += n.grad.data[r * C + c];
  });
}

Var Tape::scatter_add_rows(Var a, std::vector<std::size_t> idx, std::size_t out_rows) {
  check_open("scatter_add_rows");
  const Tensor& A = value(a);
  const std::size_t C = A.cols();
  if (idx.size() != A.rows())
    throw ShapeError("scatter_add_rows: " + std::to_string(idx.size()) + " indices for " + A.shape_str());
  for (std::size_t i : idx)
    if (i >= out_rows) throw ShapeError("scatter_add_rows: index " + std::to_string(i) + " out of " + std::to_string(out_rows));
  Tensor out({out_rows, C}, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < C; ++c) out.data[idx[r] * C + c] += A.data[r * C + c];
  return push(std::move(out), {a.id}, [idx = std::move(idx), C](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < C; ++c) ga.data[r * C + c] += n.grad.data[idx[r] * C + c];
  });
}

Var Tape::concat_rows(Var a, Var b) {
  check_open("concat_rows");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.cols()) throw ShapeError("concat_rows: " + A.shape_str() + " vs " + B.shape_str());
  const std::size_t C = A.cols();
  Tensor out({A.rows() + B.rows(), C});
  std::copy(A.data.begin(), A.data.end(), out.data.begin());
  std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(A.data.size()));
  const std::size_t ra = A.rows();
  return push(std::move(out), {a.id, b.id}, [ra, C](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    Tensor& gb = t.grad_slot(n.parents[1]);
    for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i];
    for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += n.grad.data[ra * C + i];
  });
}

Var Tape::concat_cols(Var a, Var b) {
  check_open("concat_cols");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows() != B.rows()) throw ShapeError("concat_cols: " + A.shape_str() + " vs " + B.shape_str());
  const std::size_t R = A.rows(), Ca = A.cols(), Cb = B.cols();
  Tensor out({R, Ca + Cb});
  for (std::size_t r = 0; r < R; ++r) {
    std::copy_n(&A.data[r * Ca], Ca, &out.data[r * (Ca + Cb)]);
    std::copy_n(&B.data[r * Cb], Cb, &out.data[r * (Ca + Cb) + Ca]);
  }
  return push(std::move(out), {a.id, b.id}, [R, Ca, Cb](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    Tensor& gb = t.grad_slot(n.parents[1]);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < Ca; ++c) ga.data[r * Ca + c] += n.grad.data[r * (Ca + Cb) + c];
      for (std::size_t c = 0; c < Cb; ++c) gb.data[r * Cb + c] += n.grad.data[r * (Ca + Cb) + Ca + c];
    }
  });
}

Var Tape::slice_rows(Var a, std::size_t r0, std::size_t r1) {
  check_open("slice_rows");
  const Tensor& A = value(a);
  if (r0 > r1 || r1 > A.rows()) throw ShapeError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + A.shape_str());
  const std::size_t C = A.cols();
  Tensor out({r1 - r0, C});
  std::copy_n(&A.data[r0 * C], (r1 - r0) * C, out.data.begin());
  return push(std::move(out), {a.id}, [r0, C](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) ga.data[r0 * C + i] += n.grad.data[i];
  });
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  check_open("slice_cols");
  const Tensor& A = value(a);
  const std::size_t R = A.rows(), C = A.cols();
  if (c0 > c1 || c1 > C) throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + A.shape_str());
  Tensor out({R, c1 - c0});
  for (std::size_t r = 0; r < R; ++r)
    std::copy_n(&A.data[r * C + c0], c1 - c0, &out.data[r * (c1 - c0)]);
  return push(std::move(out), {a.id}, [R, C, c0, c1](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < c1 - c0; ++c) ga.data[r * C + c0 + c] += n.grad.data[r * (c1 - c0) + c];
  });
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
  check_open("reshape");
  const Tensor& A = value(a);
  if (shape_product(shape) != A.size())
    throw ShapeError("reshape: " + A.shape_str() + " to incompatible size");
  Tensor out = A;
  out.shape = std::move(shape);
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) ga.data[i] += n.grad.data[i];
  });
}

// ---- reductions ----

Var Tape::sum(Var a) {
  check_open("sum");
  const Tensor& A = value(a);
  double s = 0.0;
  for (double v : A.data) s += v;
  return push(Tensor::scalar(s), {a.id}, [](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.accum_scaled(n.parents[0], Tensor::full(t.nodes_[n.parents[0]].val.shape, 1.0), n.grad.data[0]);
  });
}

Var Tape::mean(Var a) {
  check_open("mean");
  const Tensor& A = value(a);
  if (A.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : A.data) s += v;
  const double inv = 1.0 / static_cast<double>(A.size());
  return push(Tensor::scalar(s * inv), {a.id}, [inv](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    const double g = n.grad.data[0] * inv;
    for (double& v : ga.data) v += g;
  });
}

Var Tape::row_sum(Var a) {
  check_open("row_sum");
  const Tensor& A = value(a);
  const std::size_t R = A.rows(), C = A.cols();
  Tensor out({R, 1}, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += A.data[r * C + c];
    out.data[r] = s;
  }
  return push(std::move(out), {a.id}, [R, C](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) ga.data[r * C + c] += n.grad.data[r];
  });
}

Var Tape::row_min(Var a) {
  check_open("row_min");
  const Tensor& A = value(a);
  const std::size_t R = A.rows(), C = A.cols();
  if (C == 0) throw ShapeError("row_min: zero columns in " + A.shape_str());
  Tensor out({R, 1});
  auto arg = std::make_shared<std::vector<std::size_t>>(R);
  for (std::size_t r = 0; r < R; ++r) {
    std::size_t best = 0;
    double bv = A.data[r * C];
    for (std::size_t c = 1; c < C; ++c)
      if (A.data[r * C + c] < bv) { bv = A.data[r * C + c]; best = c; }
    out.data[r] = bv;
    (*arg)[r] = best;
  }
  return push(std::move(out), {a.id}, [arg, C](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    Tensor& ga = t.grad_slot(n.parents[0]);
    for (std::size_t r = 0; r < arg->size(); ++r) ga.data[r * C + (*arg)[r]] += n.grad.data[r];
  });
}

GradMap Tape::backward(Var root) {
  if (nodes_.empty()) throw NumericError("backward: empty tape");
  check_open("backward");
  const Tensor& rv = value(root);
  if (rv.size() != 1) throw ShapeError("backward: root must be scalar, got " + rv.shape_str());
  grad_slot(root.id).data[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.back) continue;
    n.back(*this, id);
  }
  GradMap out;
  for (const Node& n : nodes_) {
    if (n.pname.empty()) continue;
    Tensor g = n.has_grad ? n.grad : Tensor::zeros(n.val.shape);
    auto [it, inserted] = out.emplace(n.pname, std::move(g));
    if (!inserted) {
      // same param registered twice on one tape: accumulate
      for (std::size_t i = 0; i < it->second.data.size(); ++i)
        it->second.data[i] += (n.has_grad ? n.grad.data[i] : 0.0);
    }
  }
  consumed_ = true;
  return out;
}

}  // namespace calibflow
