#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "calibflow/tensor.hpp"

namespace calibflow {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using GradMap = std::map<std::string, Tensor>;

// Eager tape for reverse-mode differentiation. Ops compute values immediately
// and append one node each; the node order is a topological order of the DAG,
// so backward() is a single reverse sweep. Tapes are single-owner and
// single-threaded; parallelism lives above this layer.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var constant(Tensor v);
  Var param(const std::string& name, const Tensor& value);

  const Tensor& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

  // Elementwise arithmetic. add/sub/mul accept equal shapes, a 1-element
  // operand, or (rows x C) op (1 x C) row broadcast.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var affine(Var a, double scale, double shift);  // scale*x + shift
  Var exp(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  Var relu(Var a);
  Var tanh(Var a);
  Var softplus(Var a);
  Var emin(Var a, Var b);
  Var emax(Var a, Var b);

  // Structure.
  Var matmul(Var a, Var b);
  Var gather_rows(Var a, std::vector<std::size_t> idx);
  Var scatter_add_rows(Var a, std::vector<std::size_t> idx, std::size_t out_rows);
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var slice_rows(Var a, std::size_t r0, std::size_t r1);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var reshape(Var a, std::vector<std::size_t> shape);

  // Reductions.
  Var sum(Var a);      // -> scalar
  Var mean(Var a);     // -> scalar
  Var row_sum(Var a);  // R x C -> R x 1
  Var row_min(Var a);  // R x C -> R x 1, gradient to the first argmin

  // Reverse sweep from a scalar root. Returns gradients of all named params;
  // the tape is consumed afterwards (reset before reuse).
  GradMap backward(Var root);

  // Gradient of a non-param leaf/intermediate, available right after
  // backward() and before reset(). Used by reparameterized-sampling code.
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool has_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;  // pull self grad into parents
    std::string pname;                     // nonempty for params
  };

  Var push(Tensor val, std::vector<int> parents, std::function<void(Tape&, int)> back,
           std::string pname = {});
  Tensor& grad_slot(int id);
  void accum(int id, const Tensor& g);
  void accum_scaled(int id, const Tensor& g, double s);
  void check_open(const char* op) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;

  friend struct TapeTestPeer;
};

}  // namespace calibflow
