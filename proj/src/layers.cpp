#include "mtsparse/layers.hpp"

#include <cmath>
#include <random>

#include "mtsparse/categorical.hpp"

namespace mtsparse {

void ConvGeometry::validate() const {
  if (kernel_h <= 0 || kernel_w <= 0) throw ConfigError("conv kernel extents must be positive");
  if (height < kernel_h || width < kernel_w) {
    throw ConfigError("conv input " + std::to_string(height) + "x" + std::to_string(width) +
                      " is smaller than kernel " + std::to_string(kernel_h) + "x" +
                      std::to_string(kernel_w));
  }
}

RowMatrix im2col(const Eigen::Ref<const RowMatrix>& x, const ConvGeometry& g) {
  const Index oh = g.out_h();
  const Index ow = g.out_w();
  const Index hw = g.height * g.width;
  RowMatrix cols(g.batch * g.positions(), g.patch());
  for (Index b = 0; b < g.batch; ++b) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        const Index row = b * g.positions() + i * ow + j;
        Index q = 0;
        for (Index c = 0; c < g.channels; ++c) {
          for (Index u = 0; u < g.kernel_h; ++u) {
            for (Index v = 0; v < g.kernel_w; ++v) {
              cols(row, q++) = x(b, c * hw + (i + u) * g.width + (j + v));
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Eigen::Ref<const RowMatrix>& cols, const ConvGeometry& g,
                Eigen::Ref<RowMatrix> dx) {
  const Index oh = g.out_h();
  const Index ow = g.out_w();
  const Index hw = g.height * g.width;
  for (Index b = 0; b < g.batch; ++b) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        const Index row = b * g.positions() + i * ow + j;
        Index q = 0;
        for (Index c = 0; c < g.channels; ++c) {
          for (Index u = 0; u < g.kernel_h; ++u) {
            for (Index v = 0; v < g.kernel_w; ++v) {
              dx(b, c * hw + (i + u) * g.width + (j + v)) += cols(row, q++);
            }
          }
        }
      }
    }
  }
}

RowMatrix positions_to_channels(const Eigen::Ref<const RowMatrix>& out, const ConvGeometry& g) {
  const Index p = g.positions();
  RowMatrix y(g.batch, g.kernels * p);
  for (Index b = 0; b < g.batch; ++b) {
    for (Index k = 0; k < g.kernels; ++k) {
      y.row(b).segment(k * p, p) = out.block(b * p, k, p, 1).transpose();
    }
  }
  return y;
}

RowMatrix channels_to_positions(const Eigen::Ref<const RowMatrix>& y, const ConvGeometry& g) {
  const Index p = g.positions();
  RowMatrix out(g.batch * p, g.kernels);
  for (Index b = 0; b < g.batch; ++b) {
    for (Index k = 0; k < g.kernels; ++k) {
      out.block(b * p, k, p, 1) = y.row(b).segment(k * p, p).transpose();
    }
  }
  return out;
}

Tensor forward_dense(const Tensor& x, const MaskedParam& p, const Tensor& bias) {
  if (x.rank() != 2 || p.value.rank() != 2) throw ConfigError("forward_dense expects x[B,I] and W[I,O]");
  const Index in = p.value.extent(0);
  const Index out = p.value.extent(1);
  if (x.extent(1) != in) {
    throw ConfigError("forward_dense: input " + shape_string(x.shape()) + " does not conform to weight " +
                      shape_string(p.value.shape()));
  }
  if (bias.size() != out) throw ConfigError("forward_dense: bias must have " + std::to_string(out) + " entries");
  const RowMatrix w = p.value.matrix().cwiseProduct(p.mask.matrix());
  RowMatrix y = x.matrix() * w;
  y.rowwise() += bias.data().transpose();
  return Tensor::from_matrix(y);
}

Tensor forward_conv2d(const Tensor& x, const MaskedParam& p, const Tensor& bias) {
  if (x.rank() != 4 || p.value.rank() != 4) throw ConfigError("forward_conv2d expects x[B,C,H,W] and W[K,C,kh,kw]");
  ConvGeometry g{x.extent(0), x.extent(1), x.extent(2), x.extent(3),
                 p.value.extent(0), p.value.extent(2), p.value.extent(3)};
  if (p.value.extent(1) != g.channels) throw ConfigError("forward_conv2d: channel mismatch");
  g.validate();
  if (bias.size() != g.kernels) throw ConfigError("forward_conv2d: bias must have one entry per kernel");
  const RowMatrix w = p.value.matrix().cwiseProduct(p.mask.matrix());
  RowMatrix out = im2col(x.matrix(), g) * w.transpose();
  out.rowwise() += bias.data().transpose();
  const RowMatrix y = positions_to_channels(out, g);
  return Tensor({g.batch, g.kernels, g.out_h(), g.out_w()}, y.reshaped<Eigen::RowMajor>());
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  if (x.rank() != 2) throw ConfigError("layer_norm expects x[B,F]");
  const Index f = x.extent(1);
  if (f < 1) throw ConfigError("layer_norm needs at least one feature");
  if (gain.size() != f || shift.size() != f) throw ConfigError("layer_norm: gain/shift extent mismatch");
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  RowMatrix y(x.rows(), f);
  const auto xm = x.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = xm.row(r).mean();
    const double var = (xm.row(r).array() - mu).square().mean();
    y.row(r) = ((xm.row(r).array() - mu) / std::sqrt(var + eps)) * gain.data().transpose().array() +
               shift.data().transpose().array();
  }
  return Tensor::from_matrix(y);
}

Categorical::Categorical(RowMatrix logits) {
  if (logits.cols() < 2) throw ConfigError("categorical head needs at least two actions");
  if (!logits.allFinite()) throw NumericError("non-finite logits in categorical head");
  log_probs_ = log_softmax_rows(logits);
}

int sample_index(const Eigen::Ref<const Eigen::RowVectorXd>& probs, double u) {
  double acc = 0.0;
  for (Index a = 0; a < probs.size(); ++a) {
    acc += probs(a);
    if (u < acc) return static_cast<int>(a);
  }
  return static_cast<int>(probs.size() - 1);
}

std::vector<int> Categorical::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const RowMatrix p = probs();
  std::vector<int> out(static_cast<std::size_t>(batch()));
  for (Index r = 0; r < batch(); ++r) out[static_cast<std::size_t>(r)] = sample_index(p.row(r), unif(rng));
  return out;
}

std::vector<int> Categorical::mode() const {
  std::vector<int> out(static_cast<std::size_t>(batch()));
  for (Index r = 0; r < batch(); ++r) {
    Index best = 0;
    log_probs_.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

Vector Categorical::log_prob(std::span<const int> chosen) const {
  if (static_cast<Index>(chosen.size()) != batch()) throw ConfigError("log_prob: one action per row");
  Vector out(batch());
  for (Index r = 0; r < batch(); ++r) {
    const int a = chosen[static_cast<std::size_t>(r)];
    if (a < 0 || a >= actions()) throw ContractViolation("action out of range");
    out(r) = log_probs_(r, a);
  }
  return out;
}

Vector Categorical::entropy() const {
  return -(log_probs_.array().exp() * log_probs_.array()).rowwise().sum().matrix();
}

}  // namespace mtsparse
