#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mtsparse/tensor.hpp"

namespace mtsparse {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2: grad += weight_decay * w before the moment update.
  double weight_decay = 0.0;
};

/// Mask-aware Adam. Only unmasked entries move; moments of masked entries are
/// held at zero and values are re-zeroed under the mask after every step.
class Adam {
 public:
  Adam(std::vector<MaskedParam*> params, AdamOptions options);

  void step();
  void zero_grad();

  void reset_moments(const MaskedParam& p);
  void reset_moments(const MaskedParam& p, std::span<const Index> slots);

  bool owns(const MaskedParam& p) const;
  const Vector& first_moment(const MaskedParam& p) const;
  const Vector& second_moment(const MaskedParam& p) const;
  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<MaskedParam*>& params() const { return params_; }

 private:
  std::size_t slot_of(const MaskedParam& p) const;

  std::vector<MaskedParam*> params_;
  std::vector<Vector> first_;
  std::vector<Vector> second_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

}  // namespace mtsparse
