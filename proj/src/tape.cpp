#include "mtsparse/tape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mtsparse/categorical.hpp"
#include "mtsparse/layers.hpp"

namespace mtsparse {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "linear") return Activation::Linear;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Relu:
      return "relu";
    case Activation::Tanh:
      return "tanh";
    case Activation::Linear:
      break;
  }
  return "linear";
}

void LayerSpec::validate() const {
  if (fan_in <= 0 || fan_out <= 0) throw ConfigError("layer fan-in/fan-out must be positive");
  if (kind == LayerKind::Conv2d && (kernel_h <= 0 || kernel_w <= 0)) {
    throw ConfigError("conv kernel extents must be positive");
  }
}

}  // namespace mtsparse

namespace mtsparse::ad {

const RowMatrix& Var::value() const { return tape_->value(*this); }
const Shape& Var::shape() const { return tape_->shape(*this); }

Var Tape::push(Node node) {
  if (consumed_) throw StateError("tape already consumed by backward(); record a new forward");
  if (node.shape.empty()) node.shape = {node.value.rows(), node.value.cols()};
  if (shape_size(node.shape) != node.value.size()) {
    throw ConfigError("node shape " + shape_string(node.shape) + " does not match value size");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw ContractViolation("variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

Var Tape::constant(RowMatrix value, Shape shape) {
  return push(Node{std::move(value), {}, std::move(shape), false, {}});
}

Var Tape::leaf(RowMatrix value, Shape shape) {
  return push(Node{std::move(value), {}, std::move(shape), true, {}});
}

Var Tape::param(MaskedParam& p) {
  const Index rows = p.value.rank() <= 1 ? 1 : p.value.rows();
  const Index cols = p.value.size() / std::max<Index>(rows, 1);
  RowMatrix effective =
      (p.value.data().array() * p.mask.data().array()).matrix().reshaped<Eigen::RowMajor>(rows, cols);
  Node n{std::move(effective), {}, p.value.shape(), p.trainable, {}};
  if (p.trainable) {
    MaskedParam* target = &p;
    n.backward = [target](Tape& t, int self) {
      const RowMatrix& g = t.grad_of(self);
      auto flat = g.reshaped<Eigen::RowMajor>();
      target->value.grad().array() += flat.array() * target->mask.data().array();
    };
  }
  return push(std::move(n));
}

Var Tape::record(RowMatrix value, Shape shape, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::move(shape), std::span<const Var>(parents.begin(), parents.size()),
                std::move(fn));
}

Var Tape::record(RowMatrix value, Shape shape, std::span<const Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || node(p).needs_grad;
  Node n{std::move(value), {}, std::move(shape), needs, {}};
  if (needs) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::backward(Var root) {
  if (consumed_) throw StateError("backward() called twice on the same recorded forward");
  const Node& r = node(root);
  if (r.value.size() != 1) throw ContractViolation("backward root must be a scalar");
  consumed_ = true;
  if (!r.needs_grad) return;
  grad_of(root.id_).setOnes();
  for (int i = root.id_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
  }
}

const RowMatrix& Tape::value(Var v) const { return node(v).value; }
const Shape& Tape::shape(Var v) const { return node(v).shape; }

const RowMatrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!consumed_) throw StateError("gradient requested before backward()");
  if (n.grad.size() == 0) {
    // Nodes untouched by the sweep have zero adjoint.
    auto& mut = const_cast<Node&>(n);
    mut.grad = RowMatrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

bool Tape::needs_grad(Var v) const { return node(v).needs_grad; }

RowMatrix& Tape::grad_of(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = RowMatrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace {

Eigen::Map<const Eigen::RowVectorXd> as_row(const RowMatrix& m) { return {m.data(), m.size()}; }
Eigen::Map<Eigen::RowVectorXd> as_row(RowMatrix& m) { return {m.data(), m.size()}; }

void require_same_extent(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": extent mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_extent(a, b, "add");
  return a.tape()->record(a.value() + b.value(), a.shape(), {a, b}, [a, b](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    if (t.needs_grad(a)) t.grad_of(a.id()) += g;
    if (t.needs_grad(b)) t.grad_of(b.id()) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_extent(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), a.shape(), {a, b}, [a, b](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    if (t.needs_grad(a)) t.grad_of(a.id()) += g;
    if (t.needs_grad(b)) t.grad_of(b.id()) -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_extent(a, b, "mul");
  RowMatrix v = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(v), a.shape(), {a, b}, [a, b](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    if (t.needs_grad(a)) t.grad_of(a.id()) += g.cwiseProduct(t.value_of(b.id()));
    if (t.needs_grad(b)) t.grad_of(b.id()) += g.cwiseProduct(t.value_of(a.id()));
  });
}

Var div(Var a, Var b) {
  require_same_extent(a, b, "div");
  RowMatrix v = a.value().cwiseQuotient(b.value());
  return a.tape()->record(std::move(v), a.shape(), {a, b}, [a, b](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    const RowMatrix& bv = t.value_of(b.id());
    if (t.needs_grad(a)) t.grad_of(a.id()) += g.cwiseQuotient(bv);
    if (t.needs_grad(b)) {
      const RowMatrix& av = t.value_of(a.id());
      t.grad_of(b.id()).array() -= g.array() * av.array() / bv.array().square();
    }
  });
}

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, a.shape(), {a},
                          [a, s](Tape& t, int self) { t.grad_of(a.id()) += s * t.grad_of(self); });
}

Var square(Var a) {
  return a.tape()->record(a.value().cwiseAbs2(), a.shape(), {a}, [a](Tape& t, int self) {
    t.grad_of(a.id()).array() += 2.0 * t.grad_of(self).array() * t.value_of(a.id()).array();
  });
}

Var sum(Var a) {
  RowMatrix v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape()->record(std::move(v), {1}, {a}, [a](Tape& t, int self) {
    t.grad_of(a.id()).array() += t.grad_of(self)(0, 0);
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul: inner extents differ " + shape_string(a.shape()) + " x " +
                      shape_string(b.shape()));
  }
  RowMatrix v = a.value() * b.value();
  return a.tape()->record(std::move(v), {}, {a, b}, [a, b](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    if (t.needs_grad(a)) t.grad_of(a.id()).noalias() += g * t.value_of(b.id()).transpose();
    if (t.needs_grad(b)) t.grad_of(b.id()).noalias() += t.value_of(a.id()).transpose() * g;
  });
}

Var add_bias(Var x, Var bias) {
  if (bias.value().size() != x.cols()) {
    throw ConfigError("bias extent " + shape_string(bias.shape()) + " does not match " +
                      std::to_string(x.cols()) + " outputs");
  }
  RowMatrix v = x.value();
  v.rowwise() += as_row(bias.value());
  return x.tape()->record(std::move(v), x.shape(), {x, bias}, [x, bias](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    if (t.needs_grad(x)) t.grad_of(x.id()) += g;
    if (t.needs_grad(bias)) {
      RowMatrix& gb = t.grad_of(bias.id());
      as_row(gb) += g.colwise().sum();
    }
  });
}

Var relu(Var x) {
  RowMatrix v = x.value().cwiseMax(0.0);
  return x.tape()->record(std::move(v), x.shape(), {x}, [x](Tape& t, int self) {
    t.grad_of(x.id()).array() +=
        t.grad_of(self).array() * (t.value_of(x.id()).array() > 0.0).cast<double>();
  });
}

Var tanh(Var x) {
  RowMatrix v = x.value().array().tanh().matrix();
  return x.tape()->record(std::move(v), x.shape(), {x}, [x](Tape& t, int self) {
    const RowMatrix& y = t.value_of(self);
    t.grad_of(x.id()).array() += t.grad_of(self).array() * (1.0 - y.array().square());
  });
}

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::Relu:
      return relu(x);
    case Activation::Tanh:
      return tanh(x);
    case Activation::Linear:
      break;
  }
  return x;
}

Var row_dot(Var a, Var b) {
  require_same_extent(a, b, "row_dot");
  RowMatrix v = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape()->record(std::move(v), {}, {a, b}, [a, b](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);  // [B,1]
    if (t.needs_grad(a)) {
      t.grad_of(a.id()).array() += t.value_of(b.id()).array().colwise() * g.col(0).array();
    }
    if (t.needs_grad(b)) {
      t.grad_of(b.id()).array() += t.value_of(a.id()).array().colwise() * g.col(0).array();
    }
  });
}

Var scale_rows(Var a, Var s) {
  if (s.cols() != 1 || s.rows() != a.rows()) throw ConfigError("scale_rows: scale must be [B,1]");
  RowMatrix v = a.value().array().colwise() * s.value().col(0).array();
  return a.tape()->record(std::move(v), a.shape(), {a, s}, [a, s](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    if (t.needs_grad(a)) {
      t.grad_of(a.id()).array() += g.array().colwise() * t.value_of(s.id()).col(0).array();
    }
    if (t.needs_grad(s)) {
      t.grad_of(s.id()).col(0) += g.cwiseProduct(t.value_of(a.id())).rowwise().sum();
    }
  });
}

Var column(Var a, Index col) {
  if (col < 0 || col >= a.cols()) throw ConfigError("column index out of range");
  RowMatrix v = a.value().col(col);
  return a.tape()->record(std::move(v), {}, {a}, [a, col](Tape& t, int self) {
    t.grad_of(a.id()).col(col) += t.grad_of(self).col(0);
  });
}

Var gather_rows(Var x, std::span<const Index> rows) {
  std::vector<Index> idx(rows.begin(), rows.end());
  RowMatrix v(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.rows()) throw ConfigError("gather_rows: row out of range");
    v.row(static_cast<Index>(i)) = x.value().row(idx[i]);
  }
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(idx.size());
  return x.tape()->record(std::move(v), std::move(shape), {x}, [x, idx](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    RowMatrix& gx = t.grad_of(x.id());
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Index>(i));
  });
}

Var log_softmax(Var logits) {
  RowMatrix v = log_softmax_rows(logits.value());
  return logits.tape()->record(std::move(v), logits.shape(), {logits}, [logits](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    const RowMatrix p = t.value_of(self).array().exp().matrix();
    const Vector gsum = g.rowwise().sum();
    t.grad_of(logits.id()) += g - (p.array().colwise() * gsum.array()).matrix();
  });
}

Var pick(Var x, std::span<const int> cols) {
  if (static_cast<Index>(cols.size()) != x.rows()) throw ConfigError("pick: one column per row");
  std::vector<int> c(cols.begin(), cols.end());
  RowMatrix v(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    if (c[static_cast<std::size_t>(r)] < 0 || c[static_cast<std::size_t>(r)] >= x.cols()) {
      throw ConfigError("pick: column out of range");
    }
    v(r, 0) = x.value()(r, c[static_cast<std::size_t>(r)]);
  }
  return x.tape()->record(std::move(v), {}, {x}, [x, c](Tape& t, int self) {
    const RowMatrix& g = t.grad_of(self);
    RowMatrix& gx = t.grad_of(x.id());
    for (Index r = 0; r < g.rows(); ++r) gx(r, c[static_cast<std::size_t>(r)]) += g(r, 0);
  });
}

Var dense(Var x, Var weight, Var bias) {
  if (x.cols() != weight.rows()) {
    throw ConfigError("dense: input has " + std::to_string(x.cols()) + " features, weight expects " +
                      std::to_string(weight.rows()));
  }
  return add_bias(matmul(x, weight), bias);
}

Var conv2d(Var x, Var weight, Var bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4) throw ConfigError("conv2d expects [B,C,H,W] input and [K,C,kh,kw] kernel");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3]};
  if (ws[1] != g.channels) throw ConfigError("conv2d: kernel channels do not match input channels");
  g.validate();
  if (bias.value().size() != g.kernels) throw ConfigError("conv2d: bias extent must equal kernel count");

  RowMatrix cols = im2col(x.value(), g);
  RowMatrix out = cols * weight.value().transpose();
  out.rowwise() += as_row(bias.value());
  RowMatrix y = positions_to_channels(out, g);
  Shape ys{g.batch, g.kernels, g.out_h(), g.out_w()};
  return x.tape()->record(
      std::move(y), std::move(ys), {x, weight, bias},
      [x, weight, bias, g, cols = std::move(cols)](Tape& t, int self) {
        const RowMatrix dout = channels_to_positions(t.grad_of(self), g);
        if (t.needs_grad(weight)) t.grad_of(weight.id()).noalias() += dout.transpose() * cols;
        if (t.needs_grad(bias)) {
          as_row(t.grad_of(bias.id())) += dout.colwise().sum();
        }
        if (t.needs_grad(x)) {
          const RowMatrix dcols = dout * t.value_of(weight.id());
          col2im_add(dcols, g, t.grad_of(x.id()));
        }
      });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
  const Index f = x.cols();
  if (gain.value().size() != f || shift.value().size() != f) {
    throw ConfigError("layer_norm: gain/shift extent must equal feature count");
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const RowMatrix& xv = x.value();
  RowMatrix xhat(xv.rows(), f);
  Vector inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  const auto gv = as_row(gain.value());
  const auto sv = as_row(shift.value());
  RowMatrix y = (xhat.array().rowwise() * gv.array()).rowwise() + sv.array();
  return x.tape()->record(
      std::move(y), x.shape(), {x, gain, shift},
      [x, gain, shift, f, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
        const RowMatrix& g = t.grad_of(self);
        if (t.needs_grad(gain)) {
          as_row(t.grad_of(gain.id())) += g.cwiseProduct(xhat).colwise().sum();
        }
        if (t.needs_grad(shift)) {
          as_row(t.grad_of(shift.id())) += g.colwise().sum();
        }
        if (t.needs_grad(x)) {
          const auto gv = as_row(t.value_of(gain.id()));
          const RowMatrix dxhat = g.array().rowwise() * gv.array();
          RowMatrix& gx = t.grad_of(x.id());
          const double n = static_cast<double>(f);
          for (Index r = 0; r < g.rows(); ++r) {
            const double s1 = dxhat.row(r).sum();
            const double s2 = dxhat.row(r).dot(xhat.row(r));
            gx.row(r).array() +=
                (inv_std(r) / n) * (n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
          }
        }
      });
}

Var mse(Var pred, const RowMatrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ConfigError("mse: prediction and target extents differ");
  }
  RowMatrix diff = pred.value() - target;
  const double n = static_cast<double>(diff.size());
  RowMatrix v(1, 1);
  v(0, 0) = diff.squaredNorm() / n;
  return pred.tape()->record(std::move(v), {1}, {pred}, [pred, n, diff = std::move(diff)](Tape& t, int self) {
    t.grad_of(pred.id()) += (2.0 * t.grad_of(self)(0, 0) / n) * diff;
  });
}

Var clipped_surrogate(Var logits, std::span<const int> actions, std::span<const double> logp_old,
                      std::span<const double> advantages, double clip, double entropy_coef) {
  const Index b = logits.rows();
  if (static_cast<Index>(actions.size()) != b || static_cast<Index>(logp_old.size()) != b ||
      static_cast<Index>(advantages.size()) != b) {
    throw ConfigError("clipped_surrogate: per-sample arrays must match the batch");
  }
  const RowMatrix logp = log_softmax_rows(logits.value());
  const RowMatrix p = logp.array().exp().matrix();
  const Vector entropy = -(p.cwiseProduct(logp)).rowwise().sum();
  Vector dlogp(b);  // d(objective_b)/d(logp_new_b)
  double objective = 0.0;
  for (Index r = 0; r < b; ++r) {
    const auto i = static_cast<std::size_t>(r);
    const double ratio = std::exp(logp(r, actions[i]) - logp_old[i]);
    if (!std::isfinite(ratio)) throw NumericError("non-finite importance ratio in PPO update");
    const double a = advantages[i];
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double unclipped_term = ratio * a;
    const double clipped_term = clipped * a;
    if (unclipped_term <= clipped_term) {
      objective += unclipped_term;
      dlogp(r) = unclipped_term;
    } else {
      objective += clipped_term;
      dlogp(r) = (ratio > 1.0 - clip && ratio < 1.0 + clip) ? unclipped_term : 0.0;
    }
  }
  const double bn = static_cast<double>(b);
  RowMatrix v(1, 1);
  v(0, 0) = -objective / bn - entropy_coef * entropy.mean();
  std::vector<int> acts(actions.begin(), actions.end());
  return logits.tape()->record(
      std::move(v), {1}, {logits},
      [logits, acts = std::move(acts), p, logp, entropy, dlogp, entropy_coef, bn](Tape& t, int self) {
        const double up = t.grad_of(self)(0, 0);
        RowMatrix& gl = t.grad_of(logits.id());
        for (Index r = 0; r < p.rows(); ++r) {
          // d logp_a / d logits = onehot(a) - p
          const double w = -up * dlogp(r) / bn;
          gl.row(r) -= w * p.row(r);
          gl(r, acts[static_cast<std::size_t>(r)]) += w;
          // dH/dlogits_j = -p_j (log p_j + H)
          gl.row(r).array() +=
              (up * entropy_coef / bn) * p.row(r).array() * (logp.row(r).array() + entropy(r));
        }
      });
}

}  // namespace mtsparse::ad
