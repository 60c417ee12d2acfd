#pragma once

#include "mtsparse/tensor.hpp"

namespace mtsparse {

/// Extents of a valid (no padding), stride-1 convolution.
struct ConvGeometry {
  Index batch = 0;
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Index kernels = 0;
  Index kernel_h = 0;
  Index kernel_w = 0;

  Index out_h() const { return height - kernel_h + 1; }
  Index out_w() const { return width - kernel_w + 1; }
  Index positions() const { return out_h() * out_w(); }
  Index patch() const { return channels * kernel_h * kernel_w; }

  /// Throws ConfigError when the kernel does not fit the input.
  void validate() const;
};

/// Patch matrix of shape (batch*positions) x patch; row (b, i, j) holds the
/// receptive field of output pixel (i, j) of sample b in (c, u, v) order.
RowMatrix im2col(const Eigen::Ref<const RowMatrix>& x, const ConvGeometry& g);
/// Adjoint of im2col: scatters patch gradients back into dx [batch, C*H*W].
void col2im_add(const Eigen::Ref<const RowMatrix>& cols, const ConvGeometry& g,
                Eigen::Ref<RowMatrix> dx);

/// Reorders (batch*positions) x kernels into batch x (kernels*positions).
RowMatrix positions_to_channels(const Eigen::Ref<const RowMatrix>& out, const ConvGeometry& g);
RowMatrix channels_to_positions(const Eigen::Ref<const RowMatrix>& y, const ConvGeometry& g);

/// y = x (value .* mask) + bias. x [B,I], p [I,O], bias [O].
Tensor forward_dense(const Tensor& x, const MaskedParam& p, const Tensor& bias);
/// x [B,C,H,W], p [K,C,kh,kw], bias [K] -> [B,K,H-kh+1,W-kw+1].
Tensor forward_conv2d(const Tensor& x, const MaskedParam& p, const Tensor& bias);
/// Row-wise standardization then affine; x [B,F], gain/shift [F].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

template <typename Derived>
RowMatrix apply_activation(const Eigen::MatrixBase<Derived>& x, Activation act) {
  switch (act) {
    case Activation::Relu:
      return x.cwiseMax(0.0);
    case Activation::Tanh:
      return x.array().tanh().matrix();
    case Activation::Linear:
      break;
  }
  return x;
}

}  // namespace mtsparse
