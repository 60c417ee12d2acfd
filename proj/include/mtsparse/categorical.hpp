#pragma once

#include <random>
#include <span>
#include <vector>

#include "mtsparse/tensor.hpp"

namespace mtsparse {

/// Row-wise numerically stable log-softmax.
template <typename Derived>
RowMatrix log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

template <typename Derived>
RowMatrix softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  return log_softmax_rows(logits).array().exp().matrix();
}

/// Categorical policy head over a batch of logits [B, A].
class Categorical {
 public:
  /// Throws NumericError on non-finite logits, ConfigError when A < 2.
  explicit Categorical(RowMatrix logits);

  Index batch() const { return log_probs_.rows(); }
  Index actions() const { return log_probs_.cols(); }

  const RowMatrix& log_probs() const { return log_probs_; }
  RowMatrix probs() const { return log_probs_.array().exp().matrix(); }

  std::vector<int> sample(std::mt19937_64& rng) const;
  std::vector<int> mode() const;
  Vector log_prob(std::span<const int> actions) const;
  Vector entropy() const;

 private:
  RowMatrix log_probs_;
};

/// Inverse-CDF draw from one probability row using a single uniform variate.
int sample_index(const Eigen::Ref<const Eigen::RowVectorXd>& probs, double u);

}  // namespace mtsparse
