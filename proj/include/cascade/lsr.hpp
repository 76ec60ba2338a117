#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/label_space.hpp"

namespace cascade {

inline constexpr double kDefaultMassThreshold = 0.85;

/// Candidate intents kept for one routed utterance, by descending probability.
struct ReducedLabelSet {
  std::vector<std::string> labels;
  std::vector<std::size_t> indices;  // into LabelSpace::in_scope()
  double mass = 0.0;                 // cumulative probability of the kept labels
  double p_threshold = kDefaultMassThreshold;

  std::size_t size() const noexcept { return labels.size(); }
  bool contains(const std::string& label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
  }
};

/// Smallest descending-probability prefix whose cumulative mass reaches p.
///
/// Equal probabilities keep label-space order. If rounding keeps the running sum below p
/// after every label, the whole in-scope set is returned.
inline ReducedLabelSet reduce_label_space(std::span<const double> mean_probs, const LabelSpace& labels,
                                          double p = kDefaultMassThreshold) {
  if (mean_probs.empty()) {
    throw ValidationError("cannot reduce an empty probability vector");
  }
  if (mean_probs.size() != labels.m()) {
    throw ValidationError("probability vector has " + std::to_string(mean_probs.size()) +
                          " entries for " + std::to_string(labels.m()) + " labels");
  }
  if (!(p > 0.0 && p <= 1.0)) {
    throw ValidationError("mass threshold must lie in (0, 1], got " + std::to_string(p));
  }
  const double total = std::accumulate(mean_probs.begin(), mean_probs.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-4) {
    throw ValidationError("probability vector sums to " + std::to_string(total));
  }

  std::vector<std::size_t> order(mean_probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_probs[a] > mean_probs[b]; });

  ReducedLabelSet out;
  out.p_threshold = p;
  for (std::size_t idx : order) {
    out.indices.push_back(idx);
    out.labels.push_back(labels.in_scope()[idx]);
    out.mass += mean_probs[idx];
    if (out.mass >= p) {
      break;
    }
  }
  return out;
}

/// Strategy seam for picking the prompt's candidate labels from a mean distribution.
using LabelSelector = std::function<ReducedLabelSet(std::span<const double>, const LabelSpace&)>;

inline LabelSelector cumulative_mass_selector(double p) {
  return [p](std::span<const double> probs, const LabelSpace& labels) {
    return reduce_label_space(probs, labels, p);
  };
}

struct ReductionStats {
  double avg_reduction = 0.0;  // mean of 1 - |K|/m
  double avg_set_size = 0.0;
};

inline ReductionStats reduction_stats(std::span<const ReducedLabelSet> sets, std::size_t m) {
  if (m == 0) {
    throw ValidationError("label count must be at least 1");
  }
  if (sets.empty()) {
    throw ValidationError("no reduced label sets to summarize");
  }
  double size_sum = 0.0;
  double reduction_sum = 0.0;
  for (const auto& set : sets) {
    const auto k = static_cast<double>(set.size());
    size_sum += k;
    reduction_sum += 1.0 - k / static_cast<double>(m);
  }
  const auto n = static_cast<double>(sets.size());
  return {reduction_sum / n, size_sum / n};
}

/// Fraction of gold labels that survived into their reduced set.
inline double hit_rate(std::span<const ReducedLabelSet> sets, std::span<const std::string> golds) {
  if (sets.size() != golds.size()) {
    throw ValidationError("hit_rate: " + std::to_string(sets.size()) + " sets vs " +
                          std::to_string(golds.size()) + " gold labels");
  }
  if (sets.empty()) {
    return 0.0;
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].contains(golds[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

}  // namespace cascade
