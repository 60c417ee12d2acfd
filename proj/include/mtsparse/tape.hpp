#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "mtsparse/tensor.hpp"

namespace mtsparse::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const RowMatrix& value() const;
  const Shape& shape() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Every op appends a node holding its value and a closure
/// that scatters the node's adjoint into its parents. Single use: one
/// backward() per recorded forward.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(RowMatrix value, Shape shape = {});
  /// Differentiable leaf; its gradient is readable through grad() after backward().
  Var leaf(RowMatrix value, Shape shape = {});
  /// Leaf bound to a parameter. The recorded value is value * mask and the
  /// gradient accumulated into `p.value.grad()` is masked the same way.
  Var param(MaskedParam& p);

  /// Appends an op node. `requires_grad` is inferred from the parents.
  Var record(RowMatrix value, Shape shape, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(RowMatrix value, Shape shape, std::span<const Var> parents, BackwardFn fn);

  void backward(Var root);

  const RowMatrix& value(Var v) const;
  const Shape& shape(Var v) const;
  const RowMatrix& grad(Var v) const;
  bool needs_grad(Var v) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Adjoint accumulator of node `id`, zero-allocated on first use.
  RowMatrix& grad_of(int id);
  const RowMatrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    RowMatrix value;
    RowMatrix grad;
    Shape shape;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Elementwise and structural ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var matmul(Var a, Var b);
/// x[B,O] + bias[1,O] broadcast over rows.
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var tanh(Var x);
Var activate(Var x, Activation act);
/// Row-wise inner product: [B,F] x [B,F] -> [B,1].
Var row_dot(Var a, Var b);
/// a[B,F] * s[B,1] broadcast over columns.
Var scale_rows(Var a, Var s);
/// Column `col` of a as [B,1].
Var column(Var a, Index col);
Var gather_rows(Var x, std::span<const Index> rows);
Var log_softmax(Var logits);
/// x[b, cols[b]] as [B,1].
Var pick(Var x, std::span<const int> cols);

/// Dense layer y = x W + b with W [I,O] (masked through Tape::param).
Var dense(Var x, Var weight, Var bias);
/// Valid cross-correlation, stride 1. x is [B, C*H*W] with shape [B,C,H,W];
/// weight is [K, C*kh*kw] with shape [K,C,kh,kw]; bias [1,K].
Var conv2d(Var x, Var weight, Var bias);
/// Per-row standardization followed by gain/shift (both [1,F]).
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);

/// Mean squared error against a constant target.
Var mse(Var pred, const RowMatrix& target);

/// PPO clipped surrogate with entropy bonus on categorical logits:
/// -mean(min(rA, clip(r,1-e,1+e)A)) - coef * mean(H), r = exp(logp - logp_old).
Var clipped_surrogate(Var logits, std::span<const int> actions, std::span<const double> logp_old,
                      std::span<const double> advantages, double clip, double entropy_coef);

}  // namespace mtsparse::ad
