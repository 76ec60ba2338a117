#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/ensemble.hpp"
#include "cascade/error.hpp"
#include "cascade/label_space.hpp"
#include "cascade/llm.hpp"
#include "cascade/lsr.hpp"
#include "cascade/prompting.hpp"

namespace cascade {

enum class Method { kBertOnly, kLlmOnly, kRouted, kRoutedLsr };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kBertOnly: return "bert-only";
    case Method::kLlmOnly: return "llm-only";
    case Method::kRouted: return "routed";
    case Method::kRoutedLsr: return "routed-lsr";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (auto m : {Method::kBertOnly, Method::kLlmOnly, Method::kRouted, Method::kRoutedLsr}) {
    if (method_name(m) == name) return m;
  }
  throw ValidationError("unknown method '" + std::string(name) +
                        "' (want bert-only, llm-only, routed or routed-lsr)");
}

inline bool uses_ensemble(Method m) { return m != Method::kLlmOnly; }
inline bool uses_llm(Method m) { return m != Method::kBertOnly; }

struct RouterConfig {
  double sigma = 0.12;
  double p = kDefaultMassThreshold;
  std::size_t history = kDefaultHistory;
  /// Classifier cost per run; every utterance is charged for all R runs.
  double classifier_seconds_per_run = 0.013;
  std::size_t max_parallel = 4;
};

struct RoutingDecision {
  UtteranceKey key;
  Method method = Method::kBertOnly;
  std::optional<std::string> vote_label;
  std::optional<double> uncertainty;
  bool routed = false;
  std::optional<ReducedLabelSet> offered_labels;  // routed-lsr, routed rows only
  std::string final_label;
  std::optional<bool> llm_parse_ok;
  std::optional<std::string> llm_reply;
  std::optional<std::string> error;  // transport failure for this utterance
  double classifier_seconds = 0.0;
  double llm_seconds = 0.0;

  double total_seconds() const noexcept { return classifier_seconds + llm_seconds; }
};

/// Label used when the LLM reply could not be used. LLM-only runs abstain to the OOS token;
/// cascades fall back to the classifier's vote, which always exists there.
inline std::string fallback(const LlmVerdict& verdict, Method method,
                            const std::optional<std::string>& vote_label, const LabelSpace& labels) {
  if (verdict.parse_ok && verdict.parsed_label) {
    return *verdict.parsed_label;
  }
  if (method == Method::kLlmOnly || !vote_label) {
    return labels.oos_token();
  }
  return *vote_label;
}

/// Label a cascade emits for an utterance it did not route. The classifier never abstains
/// in cascade mode; OOS can only come from the LLM.
inline std::string unrouted_cascade_label(const EnsembleSummary& summary) { return summary.vote_label; }

namespace detail {

/// Runs fn(i) for i in [0, n) on at most `limit` threads. The first exception escaping fn is
/// rethrown after every worker stops.
template <class Fn>
void bounded_parallel_for(std::size_t n, std::size_t limit, Fn&& fn) {
  const std::size_t workers = std::min(n, std::max<std::size_t>(limit, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!stop.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          stop.store(true);
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

struct WorkItem {
  const Dialogue* dialogue;
  const Utterance* utterance;
};

inline std::vector<WorkItem> work_items(const Corpus& corpus) {
  std::vector<WorkItem> items;
  for (const auto& d : corpus) {
    for (const auto& u : d.utterances) items.push_back({&d, &u});
  }
  return items;
}

inline std::vector<EnsembleSummary> summaries_for(const std::vector<WorkItem>& items, const EnsembleLog& log,
                                                  const LabelSpace& labels) {
  std::vector<EnsembleSummary> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    auto it = log.find(item.utterance->key());
    if (it == log.end()) {
      throw ValidationError("no ensemble record for utterance " + item.utterance->key().str());
    }
    out.push_back(summarize(it->second, labels));
  }
  return out;
}

// Prompts the backend and fills the LLM-side fields of `decision`.
inline void consult_llm(RoutingDecision& decision, const WorkItem& item, LlmBackend& backend,
                        const LabelSpace& labels, const std::vector<std::string>& offered,
                        std::size_t history) {
  auto window = build_context(*item.dialogue, item.utterance->turn_index, history);
  const auto prompt = render_prompt(make_prompt_spec(window, offered, labels.oos_token()));
  try {
    auto response = backend.complete(prompt);
    decision.llm_seconds = response.latency_seconds;
    auto verdict = parse_verdict(response.raw_text, offered, labels.oos_token());
    decision.llm_parse_ok = verdict.parse_ok;
    decision.llm_reply = std::move(response.raw_text);
    decision.final_label = fallback(verdict, decision.method, decision.vote_label, labels);
  } catch (const TransportError& e) {
    decision.error = e.what();
    decision.llm_parse_ok = false;
    decision.final_label = fallback(LlmVerdict{}, decision.method, decision.vote_label, labels);
  }
}

}  // namespace detail

/// Classifier alone: the vote, or the OOS token when the ensemble disagrees beyond sigma.
inline std::vector<RoutingDecision> run_bert_only(const Corpus& corpus, const EnsembleLog& log,
                                                  const LabelSpace& labels, const RouterConfig& config) {
  const auto items = detail::work_items(corpus);
  const auto summaries = detail::summaries_for(items, log, labels);
  std::vector<RoutingDecision> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& d = out[i];
    d.key = items[i].utterance->key();
    d.method = Method::kBertOnly;
    d.vote_label = summaries[i].vote_label;
    d.uncertainty = summaries[i].uncertainty;
    d.final_label = decide_oos(summaries[i], config.sigma, labels);
    d.classifier_seconds = config.classifier_seconds_per_run * static_cast<double>(summaries[i].runs);
  }
  return out;
}

/// Every utterance goes to the LLM with the full in-scope list.
inline std::vector<RoutingDecision> run_llm_only(const Corpus& corpus, LlmBackend& backend,
                                                 const LabelSpace& labels, const RouterConfig& config) {
  const auto items = detail::work_items(corpus);
  std::vector<RoutingDecision> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    out[i].key = items[i].utterance->key();
    out[i].method = Method::kLlmOnly;
  }
  detail::bounded_parallel_for(items.size(), config.max_parallel, [&](std::size_t i) {
    detail::consult_llm(out[i], items[i], backend, labels, labels.in_scope(), config.history);
  });
  return out;
}

/// Uncertainty-based cascade. Confident utterances keep the vote; the rest are prompted with
/// either the full label list or, with `lsr_enabled`, the reduced set for mass threshold p.
inline std::vector<RoutingDecision> run_routed(const Corpus& corpus, const EnsembleLog& log, LlmBackend& backend,
                                               const LabelSpace& labels, const RouterConfig& config,
                                               bool lsr_enabled) {
  const auto items = detail::work_items(corpus);
  const auto summaries = detail::summaries_for(items, log, labels);
  const auto select = cumulative_mass_selector(config.p);
  if (lsr_enabled && !(config.p > 0.0 && config.p <= 1.0)) {
    throw ValidationError("mass threshold must lie in (0, 1]");
  }

  std::vector<RoutingDecision> out(items.size());
  std::vector<std::size_t> routed;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& d = out[i];
    d.key = items[i].utterance->key();
    d.method = lsr_enabled ? Method::kRoutedLsr : Method::kRouted;
    d.vote_label = summaries[i].vote_label;
    d.uncertainty = summaries[i].uncertainty;
    d.classifier_seconds = config.classifier_seconds_per_run * static_cast<double>(summaries[i].runs);
    d.routed = should_route(summaries[i], config.sigma);
    if (d.routed) {
      if (lsr_enabled) d.offered_labels = select(summaries[i].mean_probs, labels);
      routed.push_back(i);
    } else {
      d.final_label = unrouted_cascade_label(summaries[i]);
    }
  }

  detail::bounded_parallel_for(routed.size(), config.max_parallel, [&](std::size_t r) {
    const std::size_t i = routed[r];
    const auto& offered = out[i].offered_labels ? out[i].offered_labels->labels : labels.in_scope();
    detail::consult_llm(out[i], items[i], backend, labels, offered, config.history);
  });
  return out;
}

inline std::vector<RoutingDecision> run_method(Method method, const Corpus& corpus, const EnsembleLog* log,
                                               LlmBackend* backend, const LabelSpace& labels,
                                               const RouterConfig& config) {
  if (uses_ensemble(method) && !log) throw ValidationError(std::string(method_name(method)) + " needs an ensemble log");
  if (uses_llm(method) && !backend) throw ValidationError(std::string(method_name(method)) + " needs an LLM backend");
  switch (method) {
    case Method::kBertOnly: return run_bert_only(corpus, *log, labels, config);
    case Method::kLlmOnly: return run_llm_only(corpus, *backend, labels, config);
    case Method::kRouted: return run_routed(corpus, *log, *backend, labels, config, false);
    case Method::kRoutedLsr: return run_routed(corpus, *log, *backend, labels, config, true);
  }
  throw InvariantError("unhandled method");
}

}  // namespace cascade
