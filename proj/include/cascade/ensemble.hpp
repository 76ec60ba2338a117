#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/error.hpp"
#include "cascade/io.hpp"
#include "cascade/label_space.hpp"

namespace cascade {

inline constexpr double kProbSumTolerance = 1e-4;
inline constexpr std::size_t kDefaultRuns = 5;

/// R softmax vectors for one utterance, each ordered like LabelSpace::in_scope().
struct EnsembleRecord {
  UtteranceKey key;
  std::vector<std::vector<double>> runs;  // runs[run_id][label]
};

using EnsembleLog = std::map<UtteranceKey, EnsembleRecord>;

struct EnsembleSummary {
  std::size_t vote_index = 0;
  std::string vote_label;
  std::vector<double> mean_probs;
  /// Sample std (divisor R-1) of the vote label's probability across runs; 0 when R == 1.
  double uncertainty = 0.0;
  /// The same dispersion for every in-scope label, for inspection.
  std::vector<double> per_class_std;
  std::size_t runs = 0;
};

namespace detail {

inline double checked_sum(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) sum += p;
  return sum;
}

// Mean and sample std of one label's column, computed over the sorted values so the
// result depends only on the multiset of run outputs, not on run order.
inline std::pair<double, double> column_moments(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(n);
  if (n < 2) {
    return {mean, 0.0};
  }
  // Pairwise form of the sample variance: exactly zero when all runs agree.
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = values[j] - values[i];
      acc += d * d;
    }
  }
  const double var = acc / static_cast<double>(n * (n - 1));
  return {mean, std::sqrt(var)};
}

}  // namespace detail

/// Reads the per-run probability log written by the classifier exporter.
///
/// Each line is {dialogue_id, turn_index, run_id, probs: {label: p}}. Every utterance must
/// carry exactly `expected_runs` runs with ids 0..R-1, and every vector must cover the full
/// in-scope label set and sum to 1 within 1e-4.
inline EnsembleLog load_ensemble_log(const std::filesystem::path& path, const LabelSpace& labels,
                                     std::size_t expected_runs = kDefaultRuns) {
  if (expected_runs == 0) {
    throw ValidationError("expected run count must be at least 1");
  }
  EnsembleLog log;
  std::map<UtteranceKey, std::vector<bool>> present;

  io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto record = io::parse_record(path, line_no, line);
    UtteranceKey key{detail::require_string(record, "dialogue_id", where),
                     detail::require_index(record, "turn_index", where)};
    if (!record.contains("run_id")) {
      throw ValidationError(where + ": missing run_id for " + key.str());
    }
    const auto run_id = detail::require_index(record, "run_id", where);
    if (static_cast<std::size_t>(run_id) >= expected_runs) {
      throw ValidationError(where + ": run_id " + std::to_string(run_id) + " outside [0, " +
                            std::to_string(expected_runs) + ") for " + key.str());
    }
    auto probs_it = record.find("probs");
    if (probs_it == record.end() || !probs_it->is_object()) {
      throw ValidationError(where + ": missing probs object for " + key.str());
    }

    std::vector<double> vec(labels.m(), 0.0);
    std::vector<bool> filled(labels.m(), false);
    for (const auto& [label, value] : probs_it->items()) {
      auto idx = labels.index_of(label);
      if (!idx) {
        throw ValidationError(where + ": unknown label '" + label + "' for " + key.str());
      }
      if (!value.is_number()) {
        throw ValidationError(where + ": probability for '" + label + "' is not a number");
      }
      const double p = value.get<double>();
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError(where + ": probability " + std::to_string(p) + " for '" + label +
                              "' outside [0,1]");
      }
      vec[*idx] = p;
      filled[*idx] = true;
    }
    for (std::size_t i = 0; i < labels.m(); ++i) {
      if (!filled[i]) {
        throw ValidationError(where + ": missing probability for label '" + labels.in_scope()[i] +
                              "' in " + key.str());
      }
    }
    const double sum = detail::checked_sum(vec);
    if (std::abs(sum - 1.0) > kProbSumTolerance) {
      throw ValidationError(where + ": probabilities for " + key.str() + " run " +
                            std::to_string(run_id) + " sum to " + std::to_string(sum));
    }

    auto& seen = present[key];
    if (seen.empty()) {
      seen.assign(expected_runs, false);
      log[key] = EnsembleRecord{key, std::vector<std::vector<double>>(expected_runs)};
    }
    if (seen[static_cast<std::size_t>(run_id)]) {
      throw ValidationError(where + ": duplicate run " + std::to_string(run_id) + " for " +
                            key.str());
    }
    seen[static_cast<std::size_t>(run_id)] = true;
    log[key].runs[static_cast<std::size_t>(run_id)] = std::move(vec);
  });

  for (const auto& [key, seen] : present) {
    std::string missing;
    for (std::size_t r = 0; r < seen.size(); ++r) {
      if (!seen[r]) {
        missing += (missing.empty() ? "" : ",") + std::to_string(r);
      }
    }
    if (!missing.empty()) {
      throw ValidationError("ensemble log: utterance " + key.str() + " is missing run(s) " +
                            missing + " of " + std::to_string(expected_runs));
    }
  }
  return log;
}

inline std::string serialize_ensemble_log(const EnsembleLog& log, const LabelSpace& labels) {
  std::string out;
  for (const auto& [key, record] : log) {
    for (std::size_t r = 0; r < record.runs.size(); ++r) {
      ordered_json line;
      line["dialogue_id"] = key.dialogue_id;
      line["turn_index"] = key.turn_index;
      line["run_id"] = r;
      ordered_json probs = ordered_json::object();
      for (std::size_t i = 0; i < labels.m(); ++i) {
        probs[labels.in_scope()[i]] = record.runs[r][i];
      }
      line["probs"] = std::move(probs);
      out += line.dump();
      out += '\n';
    }
  }
  return out;
}

/// Majority vote over per-run argmax labels, plus mean distribution and dispersion.
///
/// Vote ties go to the label with the highest mean probability, then to the earlier label.
/// A run's own argmax ties go to the earlier label.
inline EnsembleSummary summarize(const EnsembleRecord& record, const LabelSpace& labels) {
  const std::size_t m = labels.m();
  const std::size_t r_count = record.runs.size();
  if (r_count == 0) {
    throw ValidationError("ensemble record " + record.key.str() + " has no runs");
  }
  std::vector<std::size_t> votes(m, 0);
  for (const auto& run : record.runs) {
    if (run.size() != m) {
      throw ValidationError("ensemble record " + record.key.str() + " has a vector of size " +
                            std::to_string(run.size()) + ", expected " + std::to_string(m));
    }
    auto best = std::max_element(run.begin(), run.end());
    ++votes[static_cast<std::size_t>(best - run.begin())];
  }

  EnsembleSummary s;
  s.runs = r_count;
  s.mean_probs.resize(m);
  s.per_class_std.resize(m);
  std::vector<double> column(r_count);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t r = 0; r < r_count; ++r) column[r] = record.runs[r][j];
    auto [mean, sd] = detail::column_moments(column);
    s.mean_probs[j] = mean;
    s.per_class_std[j] = sd;
  }

  std::size_t best = 0;
  for (std::size_t j = 1; j < m; ++j) {
    if (votes[j] > votes[best] || (votes[j] == votes[best] && s.mean_probs[j] > s.mean_probs[best])) {
      best = j;
    }
  }
  s.vote_index = best;
  s.vote_label = labels.in_scope()[best];
  s.uncertainty = s.per_class_std[best];
  return s;
}

/// Strictly greater than sigma counts as uncertain.
inline bool should_route(const EnsembleSummary& summary, double sigma) {
  return summary.uncertainty > sigma;
}

/// Standalone classifier decision: the OOS token when uncertain, else the vote.
inline std::string decide_oos(const EnsembleSummary& summary, double sigma, const LabelSpace& labels) {
  return should_route(summary, sigma) ? labels.oos_token() : summary.vote_label;
}

}  // namespace cascade
