#include "mtsparse/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mtsparse {

void GMPConfig::validate() const {
  if (!(final_sparsity > 0.0 && final_sparsity < 1.0)) throw ConfigError("gmp.final_sparsity must lie in (0, 1)");
  if (frequency <= 0) throw ConfigError("gmp.frequency must be positive");
  if (total_steps <= 0) throw ConfigError("gmp total timesteps must be positive");
  if (!(start_fraction >= 0.0 && start_fraction < end_fraction && end_fraction <= 1.0)) {
    throw ConfigError("gmp schedule needs 0 <= t_start < t_end <= T");
  }
}

void SETConfig::validate() const {
  if (!(sparsity > 0.0 && sparsity < 1.0)) throw ConfigError("set.sparsity must lie in (0, 1)");
  if (!(rewire_fraction > 0.0 && rewire_fraction < 1.0)) throw ConfigError("set.rewire_fraction must lie in (0, 1)");
  if (frequency <= 0) throw ConfigError("set.frequency must be positive");
}

Index SparsityReport::nonzero() const {
  Index n = 0;
  for (const auto& l : layers) n += l.nonzero;
  return n;
}

Index SparsityReport::total() const {
  Index n = 0;
  for (const auto& l : layers) n += l.total;
  return n;
}

double gmp_target_sparsity(double t, const GMPConfig& cfg) {
  const double start = cfg.t_start();
  const double end = cfg.t_end();
  if (t < start) return 0.0;
  if (t > end) return cfg.final_sparsity;
  const double progress = (t - start) / (end - start);
  const double remaining = 1.0 - progress;
  return cfg.final_sparsity * (1.0 - remaining * remaining * remaining);
}

SparsityReport measure_sparsity(std::span<MaskedParam* const> params) {
  SparsityReport r;
  for (const MaskedParam* p : params) {
    if (!p->sparsifiable) continue;
    LayerSparsity l{p->name, p->active_count(), p->numel(), 1.0};
    l.density = l.total > 0 ? static_cast<double>(l.nonzero) / static_cast<double>(l.total) : 1.0;
    r.layers.push_back(std::move(l));
  }
  const Index total = r.total();
  r.global_sparsity = total > 0 ? 1.0 - static_cast<double>(r.nonzero()) / static_cast<double>(total) : 0.0;
  return r;
}

SparsityReport prune_to_sparsity(std::span<MaskedParam* const> params, double target) {
  SparsityReport before = measure_sparsity(params);
  const Index total = before.total();
  const Index masked_now = total - before.nonzero();
  const auto want = static_cast<Index>(std::floor(target * static_cast<double>(total) + 1e-9));
  if (want < masked_now) {
    before.warning = "target sparsity below current sparsity; pruning skipped";
    return before;
  }
  const Index to_mask = want - masked_now;
  if (to_mask == 0) return before;

  struct Candidate {
    double magnitude;
    Index flat;
    MaskedParam* param;
    Index slot;
  };
  std::vector<Candidate> active;
  active.reserve(static_cast<std::size_t>(before.nonzero()));
  Index offset = 0;
  for (MaskedParam* p : params) {
    if (!p->sparsifiable) continue;
    const auto& mask = p->mask.data();
    const auto& value = p->value.data();
    for (Index i = 0; i < p->numel(); ++i) {
      if (mask(i) != 0.0) active.push_back({std::abs(value(i)), offset + i, p, i});
    }
    offset += p->numel();
  }
  auto by_magnitude = [](const Candidate& a, const Candidate& b) {
    return a.magnitude < b.magnitude || (a.magnitude == b.magnitude && a.flat < b.flat);
  };
  const auto cut = active.begin() + to_mask;
  std::nth_element(active.begin(), cut, active.end(), by_magnitude);
  for (auto it = active.begin(); it != cut; ++it) {
    it->param->mask.data()(it->slot) = 0.0;
    it->param->value.data()(it->slot) = 0.0;
  }
  SparsityReport after = measure_sparsity(params);
  after.pruned = to_mask;
  return after;
}

Index layer_numel(const LayerSpec& spec) {
  if (spec.kind == LayerKind::Conv2d) {
    // fan_in = C*kh*kw and fan_out = K*kh*kw.
    return spec.fan_in * spec.fan_out / (spec.kernel_h * spec.kernel_w);
  }
  return spec.fan_in * spec.fan_out;
}

namespace {

double erk_scale(const LayerSpec& l) {
  const auto fi = static_cast<double>(l.fan_in);
  const auto fo = static_cast<double>(l.fan_out);
  return (fi + fo) / (fi * fo);
}

}  // namespace

std::vector<double> erk_densities(std::span<const LayerSpec> layers, double sparsity) {
  if (!(sparsity > 0.0 && sparsity < 1.0)) throw ConfigError("ERK sparsity must lie in (0, 1)");
  if (layers.empty()) throw ConfigError("ERK needs at least one layer");
  double total = 0.0;
  double c_hi = 0.0;
  for (const auto& l : layers) {
    l.validate();
    total += static_cast<double>(layer_numel(l));
    c_hi = std::max(c_hi, 1.0 / erk_scale(l));
  }
  const double target = (1.0 - sparsity) * total;
  auto kept = [&](double c) {
    double k = 0.0;
    for (const auto& l : layers) k += std::min(1.0, c * erk_scale(l)) * static_cast<double>(layer_numel(l));
    return k;
  };
  double lo = 0.0;
  double hi = c_hi;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (kept(mid) < target ? lo : hi) = mid;
  }
  const double c = 0.5 * (lo + hi);
  std::vector<double> out;
  for (const auto& l : layers) out.push_back(std::min(1.0, c * erk_scale(l)));
  return out;
}

std::vector<Index> erk_kept_counts(std::span<const LayerSpec> layers, double sparsity) {
  const std::vector<double> density = erk_densities(layers, sparsity);
  Index total = 0;
  for (const auto& l : layers) total += layer_numel(l);
  const auto target = static_cast<Index>(std::llround((1.0 - sparsity) * static_cast<double>(total)));

  std::vector<Index> kept(layers.size());
  std::vector<double> remainder(layers.size());
  Index assigned = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const double exact = density[i] * static_cast<double>(layer_numel(layers[i]));
    kept[i] = static_cast<Index>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(kept[i]);
    assigned += kept[i];
  }
  std::vector<std::size_t> order(layers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t j = 0; assigned < target; j = (j + 1) % order.size()) {
    const std::size_t i = order[j];
    if (kept[i] < layer_numel(layers[i])) {
      ++kept[i];
      ++assigned;
    }
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (kept[i] == 0) {
      throw ConfigError("ERK allocation leaves layer " + std::to_string(i) + " without weights at sparsity " +
                        std::to_string(sparsity));
    }
  }
  return kept;
}

namespace {

Tensor random_mask(Shape shape, Index kept, std::mt19937_64& rng) {
  Tensor mask(std::move(shape), 0.0);
  std::vector<Index> slots(static_cast<std::size_t>(mask.size()));
  std::iota(slots.begin(), slots.end(), Index{0});
  for (Index i = 0; i < kept; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), slots.size() - 1);
    std::swap(slots[static_cast<std::size_t>(i)], slots[pick(rng)]);
    mask.data()(slots[static_cast<std::size_t>(i)]) = 1.0;
  }
  return mask;
}

LayerSpec spec_of(const MaskedParam& p) {
  LayerSpec s;
  if (p.value.rank() == 4) {
    s.kind = LayerKind::Conv2d;
    s.kernel_h = p.value.extent(2);
    s.kernel_w = p.value.extent(3);
  }
  s.fan_in = p.fan_in;
  s.fan_out = p.fan_out;
  return s;
}

}  // namespace

std::vector<Tensor> erk_init_masks(std::span<const LayerSpec> layers, double sparsity, std::mt19937_64& rng) {
  const std::vector<Index> kept = erk_kept_counts(layers, sparsity);
  std::vector<Tensor> masks;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    Shape shape = l.kind == LayerKind::Conv2d
                      ? Shape{l.fan_out / (l.kernel_h * l.kernel_w), l.fan_in / (l.kernel_h * l.kernel_w), l.kernel_h, l.kernel_w}
                      : Shape{l.fan_in, l.fan_out};
    masks.push_back(random_mask(std::move(shape), kept[i], rng));
  }
  return masks;
}

SparsityReport apply_erk_masks(std::span<MaskedParam* const> params, double sparsity, std::mt19937_64& rng) {
  std::vector<MaskedParam*> targets;
  std::vector<LayerSpec> specs;
  for (MaskedParam* p : params) {
    if (!p->sparsifiable) continue;
    targets.push_back(p);
    specs.push_back(spec_of(*p));
  }
  const std::vector<Index> kept = erk_kept_counts(specs, sparsity);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    targets[i]->mask = random_mask(targets[i]->value.shape(), kept[i], rng);
    targets[i]->apply_mask();
  }
  return measure_sparsity(params);
}

SparsityReport set_evolve(std::span<MaskedParam* const> params, const SETConfig& cfg, std::mt19937_64& rng) {
  SparsityReport report;
  Index pruned = 0;
  Index regrown = 0;
  for (MaskedParam* p : params) {
    if (!p->sparsifiable) continue;
    auto& mask = p->mask.data();
    auto& value = p->value.data();
    std::vector<Index> active;
    std::vector<Index> inactive;
    for (Index i = 0; i < p->numel(); ++i) (mask(i) != 0.0 ? active : inactive).push_back(i);
    auto demand = static_cast<Index>(std::floor(cfg.rewire_fraction * static_cast<double>(active.size())));
    if (demand > static_cast<Index>(inactive.size())) {
      report.warning += p->name + ": regrowth capped at " + std::to_string(inactive.size()) + "; ";
      demand = static_cast<Index>(inactive.size());
    }
    if (demand == 0) continue;
    std::stable_sort(active.begin(), active.end(),
                     [&](Index a, Index b) { return std::abs(value(a)) < std::abs(value(b)); });
    for (Index i = 0; i < demand; ++i) {
      const Index slot = active[static_cast<std::size_t>(i)];
      mask(slot) = 0.0;
      value(slot) = 0.0;
    }
    // Regrowth candidates are the slots masked before this event.
    std::vector<Index> grown;
    for (Index i = 0; i < demand; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), inactive.size() - 1);
      std::swap(inactive[static_cast<std::size_t>(i)], inactive[pick(rng)]);
      const Index slot = inactive[static_cast<std::size_t>(i)];
      mask(slot) = 1.0;
      grown.push_back(slot);
    }
    std::sort(grown.begin(), grown.end());
    std::uniform_real_distribution<double> unif(-p->init_bound, p->init_bound);
    for (Index slot : grown) value(slot) = p->init_bound > 0.0 ? unif(rng) : p->init_fill;
    pruned += demand;
    regrown += demand;
  }
  SparsityReport after = measure_sparsity(params);
  after.pruned = pruned;
  after.regrown = regrown;
  after.warning = std::move(report.warning);
  return after;
}

Index events_crossed(Index from, Index to, Index frequency) {
  if (frequency <= 0 || to <= from) return 0;
  return to / frequency - from / frequency;
}

}  // namespace mtsparse
