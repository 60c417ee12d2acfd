#pragma once

#include <functional>
#include <random>
#include <vector>

#include "mtsparse/tape.hpp"

namespace testing {

using mtsparse::Index;
using mtsparse::RowMatrix;
using mtsparse::Shape;

struct Input {
  RowMatrix value;
  Shape shape;
};

using Builder = std::function<mtsparse::ad::Var(mtsparse::ad::Tape&, const std::vector<mtsparse::ad::Var>&)>;

inline double evaluate(const std::vector<Input>& inputs, const Builder& build) {
  mtsparse::ad::Tape tape;
  std::vector<mtsparse::ad::Var> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.constant(in.value, in.shape));
  return build(tape, leaves).value()(0, 0);
}

/// ||analytic - central difference|| / (||analytic|| + ||numeric||) over every input entry.
inline double gradient_error(std::vector<Input> inputs, const Builder& build, double h = 1e-6) {
  mtsparse::ad::Tape tape;
  std::vector<mtsparse::ad::Var> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.value, in.shape));
  tape.backward(build(tape, leaves));
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const RowMatrix analytic = tape.grad(leaves[i]);
    for (Index k = 0; k < inputs[i].value.size(); ++k) {
      double& x = inputs[i].value.data()[k];
      const double saved = x;
      x = saved + h;
      const double up = evaluate(inputs, build);
      x = saved - h;
      const double down = evaluate(inputs, build);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[k];
      diff += (a - numeric) * (a - numeric);
      scale += a * a + numeric * numeric;
    }
  }
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / std::sqrt(scale);
}

inline RowMatrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  RowMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace testing
