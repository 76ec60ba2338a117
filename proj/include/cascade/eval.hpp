#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/error.hpp"
#include "cascade/label_space.hpp"
#include "cascade/router.hpp"

namespace cascade {

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t support() const noexcept { return tp + fn; }
  std::size_t predicted() const noexcept { return tp + fp; }
  double precision() const noexcept { return predicted() ? double(tp) / double(predicted()) : 0.0; }
  double recall() const noexcept { return support() ? double(tp) / double(support()) : 0.0; }
  double f1() const noexcept {
    const auto denom = 2 * tp + fp + fn;
    return denom ? 2.0 * double(tp) / double(denom) : 0.0;
  }
  bool operator==(const ClassCounts&) const = default;
};

/// Per-label counts over Y_A, indexed like LabelSpace::all().
inline std::vector<ClassCounts> confusion(std::span<const std::string> predictions,
                                          std::span<const std::string> golds, const LabelSpace& labels) {
  if (predictions.size() != golds.size()) {
    throw ValidationError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(golds.size()) + " gold labels");
  }
  std::vector<ClassCounts> counts(labels.m() + 1);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    auto g = labels.full_index_of(golds[i]);
    auto p = labels.full_index_of(predictions[i]);
    if (!g || !p) {
      throw ValidationError("confusion: label '" + (g ? predictions[i] : golds[i]) + "' not in label space");
    }
    if (*g == *p) {
      ++counts[*g].tp;
    } else {
      ++counts[*g].fn;
      ++counts[*p].fp;
    }
  }
  return counts;
}

/// What to do with OOS predictions on in-scope gold examples in the in-scope setting.
enum class UnkPolicy { kCountAsError, kExclude };

struct EvalOptions {
  UnkPolicy unk_policy = UnkPolicy::kCountAsError;
};

struct InScopeMetrics {
  double acc = 0.0;
  double wf1 = 0.0;
  double wp = 0.0;
  std::size_t n = 0;
};

struct FullMetrics {
  double acc = 0.0;
  double macro_f1 = 0.0;
  double f1_oos = 0.0;
  std::size_t n = 0;
};

/// Accuracy, weighted F1 and weighted precision over gold-in-scope examples. Weights are
/// gold supports; an OOS prediction is a miss for its gold class and a hit for no class.
inline InScopeMetrics is_metrics(std::span<const std::string> predictions, std::span<const std::string> golds,
                                 const LabelSpace& labels, const EvalOptions& options = {}) {
  if (predictions.size() != golds.size()) {
    throw ValidationError("is_metrics: prediction/gold length mismatch");
  }
  std::vector<std::string> p;
  std::vector<std::string> g;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (labels.is_oos(golds[i])) continue;
    if (options.unk_policy == UnkPolicy::kExclude && labels.is_oos(predictions[i])) continue;
    p.push_back(predictions[i]);
    g.push_back(golds[i]);
  }
  if (g.empty()) {
    throw ValidationError("is_metrics: no in-scope gold examples");
  }
  const auto counts = confusion(p, g, labels);
  InScopeMetrics out;
  out.n = g.size();
  std::size_t correct = 0;
  for (std::size_t c = 0; c < labels.m(); ++c) {
    correct += counts[c].tp;
    const double weight = double(counts[c].support()) / double(out.n);
    out.wf1 += weight * counts[c].f1();
    out.wp += weight * counts[c].precision();
  }
  out.acc = double(correct) / double(out.n);
  return out;
}

/// Accuracy and macro F1 over all m+1 classes, plus F1 of the OOS class. Classes absent from
/// both gold and predictions are left out of the macro average.
inline FullMetrics full_metrics(std::span<const std::string> predictions, std::span<const std::string> golds,
                                const LabelSpace& labels) {
  if (golds.empty()) {
    throw ValidationError("full_metrics: no examples");
  }
  const auto counts = confusion(predictions, golds, labels);
  FullMetrics out;
  out.n = golds.size();
  std::size_t correct = 0;
  std::size_t classes = 0;
  double f1_sum = 0.0;
  for (const auto& c : counts) {
    correct += c.tp;
    if (c.support() == 0 && c.predicted() == 0) continue;
    ++classes;
    f1_sum += c.f1();
  }
  out.acc = double(correct) / double(out.n);
  out.macro_f1 = classes ? f1_sum / double(classes) : 0.0;
  out.f1_oos = counts[labels.m()].f1();
  return out;
}

struct LatencyReport {
  double avg_latency_seconds = 0.0;
  double latency_ratio = 0.0;
};

inline double average_latency(std::span<const RoutingDecision> decisions) {
  if (decisions.empty()) {
    throw ValidationError("no decisions to average");
  }
  double sum = 0.0;
  for (const auto& d : decisions) sum += d.total_seconds();
  return sum / double(decisions.size());
}

inline LatencyReport latency_from_average(double avg, double baseline_avg) {
  if (!(baseline_avg > 0.0)) {
    throw ValidationError("baseline average latency must be positive");
  }
  return {avg, avg / baseline_avg};
}

/// Mean per-utterance latency (classifier + LLM) and its ratio to a baseline average.
inline LatencyReport latency_stats(std::span<const RoutingDecision> decisions, double baseline_avg) {
  return latency_from_average(average_latency(decisions), baseline_avg);
}

struct EvalReport {
  InScopeMetrics in_scope;
  FullMetrics full;
  std::map<std::string, std::size_t> support_per_label;
  std::size_t n_is = 0;
  std::size_t n_total = 0;
  std::size_t routed = 0;
  std::size_t llm_calls = 0;
  std::size_t parse_failures = 0;
  std::size_t transport_failures = 0;
  double avg_latency_seconds = 0.0;
  std::optional<LatencyReport> latency;
};

/// Predictions and golds aligned in decision order. Every corpus utterance needs exactly one
/// decision.
struct AlignedLabels {
  std::vector<std::string> predictions;
  std::vector<std::string> golds;
};

inline AlignedLabels align(std::span<const RoutingDecision> decisions, const Corpus& corpus) {
  std::map<UtteranceKey, const Utterance*> gold;
  for (const auto& d : corpus)
    for (const auto& u : d.utterances) gold.emplace(u.key(), &u);
  AlignedLabels out;
  std::map<UtteranceKey, bool> seen;
  for (const auto& d : decisions) {
    auto it = gold.find(d.key);
    if (it == gold.end()) {
      throw ValidationError("decision for " + d.key.str() + " has no corpus utterance");
    }
    if (!seen.emplace(d.key, true).second) {
      throw ValidationError("duplicate decision for " + d.key.str());
    }
    out.predictions.push_back(d.final_label);
    out.golds.push_back(it->second->gold_intent);
  }
  if (seen.size() != gold.size()) {
    for (const auto& [key, u] : gold) {
      if (!seen.count(key)) throw ValidationError("no decision for utterance " + key.str());
    }
  }
  return out;
}

inline EvalReport evaluate(std::span<const RoutingDecision> decisions, const Corpus& corpus,
                           const LabelSpace& labels, const EvalOptions& options = {},
                           std::optional<double> baseline_avg = std::nullopt) {
  auto aligned = align(decisions, corpus);
  EvalReport report;
  report.n_total = aligned.golds.size();
  for (const auto& label : labels.all()) report.support_per_label[label] = 0;
  for (const auto& g : aligned.golds) {
    ++report.support_per_label[g];
    if (!labels.is_oos(g)) ++report.n_is;
  }
  if (report.n_is > 0) {
    report.in_scope = is_metrics(aligned.predictions, aligned.golds, labels, options);
  }
  report.full = full_metrics(aligned.predictions, aligned.golds, labels);
  for (const auto& d : decisions) {
    if (d.routed) ++report.routed;
    if (d.llm_parse_ok.has_value()) ++report.llm_calls;
    if (d.llm_parse_ok == false) ++report.parse_failures;
    if (d.error) ++report.transport_failures;
  }
  report.avg_latency_seconds = average_latency(decisions);
  if (baseline_avg) {
    report.latency = latency_from_average(report.avg_latency_seconds, *baseline_avg);
  }
  return report;
}

/// Percentage with two decimals, as in result tables.
inline std::string pct(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * value);
  return buf;
}

inline std::string fixed3(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", value);
  return buf;
}

inline std::string format_report_table(const EvalReport& r) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s\n", "", "ACC", "WF1", "WP");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s   n=%zu\n", "IS", pct(r.in_scope.acc).c_str(),
                pct(r.in_scope.wf1).c_str(), pct(r.in_scope.wp).c_str(), r.n_is);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s\n", "", "ACC", "F1-OOS", "F1");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s   n=%zu\n", "IS+OOS", pct(r.full.acc).c_str(),
                pct(r.full.f1_oos).c_str(), pct(r.full.macro_f1).c_str(), r.n_total);
  out += buf;
  out += "routed " + std::to_string(r.routed) + ", llm calls " + std::to_string(r.llm_calls) +
         ", parse failures " + std::to_string(r.parse_failures) + ", transport failures " +
         std::to_string(r.transport_failures) + "\n";
  out += "avg latency " + fixed3(r.avg_latency_seconds) + " s";
  if (r.latency) out += ", latency ratio " + fixed3(r.latency->latency_ratio);
  out += "\n";
  return out;
}

/// Machine-readable key=value form of the report; raw fractions, full precision.
inline std::string format_report_kv(const EvalReport& r) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string out;
  out += "is_acc=" + num(r.in_scope.acc) + "\n";
  out += "is_wf1=" + num(r.in_scope.wf1) + "\n";
  out += "is_wp=" + num(r.in_scope.wp) + "\n";
  out += "full_acc=" + num(r.full.acc) + "\n";
  out += "full_macro_f1=" + num(r.full.macro_f1) + "\n";
  out += "f1_oos=" + num(r.full.f1_oos) + "\n";
  out += "n_is=" + std::to_string(r.n_is) + "\n";
  out += "n_total=" + std::to_string(r.n_total) + "\n";
  out += "routed=" + std::to_string(r.routed) + "\n";
  out += "llm_calls=" + std::to_string(r.llm_calls) + "\n";
  out += "parse_failures=" + std::to_string(r.parse_failures) + "\n";
  out += "transport_failures=" + std::to_string(r.transport_failures) + "\n";
  out += "avg_latency_seconds=" + num(r.avg_latency_seconds) + "\n";
  if (r.latency) out += "latency_ratio=" + num(r.latency->latency_ratio) + "\n";
  for (const auto& [label, n] : r.support_per_label) out += "support." + label + "=" + std::to_string(n) + "\n";
  return out;
}

}  // namespace cascade
