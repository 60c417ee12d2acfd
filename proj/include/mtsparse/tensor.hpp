#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mtsparse/errors.hpp"

namespace mtsparse {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrix = RowMatrixT<double>;
using Vector = VectorT<double>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major n-dimensional array with an optional gradient slot.
///
/// Storage is a flat Eigen vector; `matrix()` views the data as
/// shape[0] x (product of remaining extents), which is how every layer
/// consumes it.
template <typename Scalar>
class BasicTensor {
 public:
  using Storage = VectorT<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrixT<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrixT<Scalar>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Storage::Constant(shape_size(shape_), fill)) {
    for (Index e : shape_) {
      if (e < 0) throw ConfigError("negative tensor extent");
    }
  }
  BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ConfigError("tensor data length does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor from_matrix(const RowMatrixT<Scalar>& m) {
    return BasicTensor({m.rows(), m.cols()}, Eigen::Map<const Storage>(m.data(), m.size()));
  }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index extent(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }

  Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
  Index cols() const { return rows() == 0 ? 0 : size() / rows(); }
  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  bool has_grad() const { return grad_.has_value(); }
  Storage& grad() {
    if (!grad_) grad_ = Storage::Zero(data_.size());
    return *grad_;
  }
  const Storage& grad() const {
    if (!grad_) throw StateError("tensor has no gradient");
    return *grad_;
  }
  void zero_grad() {
    if (grad_) grad_->setZero();
  }
  void drop_grad() { grad_.reset(); }

 private:
  Shape shape_;
  Storage data_;
  std::optional<Storage> grad_;
};

using Tensor = BasicTensor<double>;

/// A parameter tensor paired with a {0,1} mask; the unit of sparsification.
/// Effective weight is value * mask; masked entries of value are kept at 0.
struct MaskedParam {
  std::string name;
  Tensor value;
  Tensor mask;
  bool trainable = true;
  bool sparsifiable = false;
  Index fan_in = 0;
  Index fan_out = 0;
  /// Half-width of the uniform init distribution (0 means init to `init_fill`).
  double init_bound = 0.0;
  double init_fill = 0.0;

  MaskedParam() = default;
  MaskedParam(std::string n, Shape shape)
      : name(std::move(n)), value(shape), mask(shape, 1.0) {}

  Index numel() const { return value.size(); }
  Index active_count() const {
    return static_cast<Index>((mask.data().array() != 0.0).count());
  }
  /// value *= mask.
  void apply_mask() { value.data().array() *= mask.data().array(); }
  void zero_grad() { value.grad().setZero(); }
};

enum class LayerKind { Dense, Conv2d, LayerNorm, Activation };
enum class Activation { Relu, Tanh, Linear };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  Index fan_in = 0;
  Index fan_out = 0;
  Index kernel_h = 0;  // conv only
  Index kernel_w = 0;  // conv only
  Activation activation = Activation::Linear;

  void validate() const;
};

}  // namespace mtsparse
