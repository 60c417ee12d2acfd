#include "mtsparse/adam.hpp"

#include <cmath>

namespace mtsparse {

Adam::Adam(std::vector<MaskedParam*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0)) throw ConfigError("Adam learning rate must be positive");
  if (options_.beta1 < 0.0 || options_.beta1 >= 1.0 || options_.beta2 < 0.0 || options_.beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (options_.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  for (MaskedParam* p : params_) {
    first_.push_back(Vector::Zero(p->numel()));
    second_.push_back(Vector::Zero(p->numel()));
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(options_.beta1, t);
  const double correction2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    MaskedParam& p = *params_[i];
    if (!p.trainable) continue;
    const auto mask = p.mask.data().array();
    auto w = p.value.data().array();
    Vector g = (p.value.grad().array() * mask).matrix();
    if (options_.weight_decay > 0.0) g.array() += options_.weight_decay * w * mask;
    auto m = first_[i].array();
    auto v = second_[i].array();
    m = (options_.beta1 * m + (1.0 - options_.beta1) * g.array()) * mask;
    v = (options_.beta2 * v + (1.0 - options_.beta2) * g.array().square()) * mask;
    w -= options_.lr * (m / correction1) / ((v / correction2).sqrt() + options_.eps);
    w *= mask;
  }
}

void Adam::zero_grad() {
  for (MaskedParam* p : params_) p->zero_grad();
}

bool Adam::owns(const MaskedParam& p) const {
  for (const MaskedParam* q : params_) {
    if (q == &p) return true;
  }
  return false;
}

std::size_t Adam::slot_of(const MaskedParam& p) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i] == &p) return i;
  }
  throw ContractViolation("parameter '" + p.name + "' is not managed by this optimizer");
}

void Adam::reset_moments(const MaskedParam& p) {
  if (!owns(p)) return;
  const std::size_t i = slot_of(p);
  first_[i].setZero();
  second_[i].setZero();
}

void Adam::reset_moments(const MaskedParam& p, std::span<const Index> slots) {
  if (!owns(p)) return;
  const std::size_t i = slot_of(p);
  for (Index s : slots) {
    first_[i](s) = 0.0;
    second_[i](s) = 0.0;
  }
}

const Vector& Adam::first_moment(const MaskedParam& p) const { return first_[slot_of(p)]; }
const Vector& Adam::second_moment(const MaskedParam& p) const { return second_[slot_of(p)]; }

}  // namespace mtsparse
