#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/decision_log.hpp"
#include "cascade/ensemble.hpp"
#include "cascade/error.hpp"
#include "cascade/eval.hpp"
#include "cascade/http_client.hpp"
#include "cascade/io.hpp"
#include "cascade/label_space.hpp"
#include "cascade/lsr.hpp"
#include "cascade/router.hpp"
#include "cascade/stub_llm.hpp"
#include "cascade/synth.hpp"

/// Command implementations behind the `cascade` binary. Each returns a process exit code;
/// errors propagate as exceptions and are mapped by exit_code_for().
namespace cascade::app {

enum ExitCode : int {
  kOk = 0,
  kValidation = 2,
  kTransport = 3,
  kInternal = 4,
};

struct DataOptions {
  std::string labels_path;
  std::string oos_token = std::string(kDefaultOosToken);
  std::string corpus_path;
  std::string ensemble_path;  // empty when the method does not need one
  std::size_t runs = kDefaultRuns;
  std::string field_map;  // "intent=label,..." for foreign corpus exports
};

struct BackendOptions {
  std::string kind = "stub";  // stub | http
  // stub
  std::string stub_behavior = "oracle";
  std::string stub_behaviors_path;
  std::uint64_t seed = 0;
  StubLatencyModel latency;
  // http
  std::string base_url;
  std::string model;
  long long timeout_ms = 60'000;
  int max_retries = 3;
  std::string transcript_path;
  std::string auth_env = kDefaultAuthEnv;
};

struct RunOptions {
  std::string method = "routed-lsr";
  DataOptions data;
  BackendOptions backend;
  RouterConfig router;
};

/// Everything that determines a run's output, as canonical JSON.
inline ordered_json manifest_body(const RunOptions& o) {
  ordered_json j;
  j["method"] = o.method;
  j["labels"] = o.data.labels_path;
  j["oos_token"] = o.data.oos_token;
  j["corpus"] = o.data.corpus_path;
  j["ensemble"] = o.data.ensemble_path;
  j["runs"] = o.data.runs;
  j["field_map"] = o.data.field_map;
  j["sigma"] = o.router.sigma;
  j["p"] = o.router.p;
  j["history"] = o.router.history;
  j["classifier_seconds_per_run"] = o.router.classifier_seconds_per_run;
  j["max_parallel"] = o.router.max_parallel;
  ordered_json b;
  b["kind"] = o.backend.kind;
  if (o.backend.kind == "stub") {
    b["behavior"] = o.backend.stub_behavior;
    b["behaviors_file"] = o.backend.stub_behaviors_path;
    b["seed"] = o.backend.seed;
    b["base_seconds"] = o.backend.latency.base_seconds;
    b["per_label_seconds"] = o.backend.latency.per_label_seconds;
    b["jitter"] = o.backend.latency.jitter;
  } else {
    b["base_url"] = o.backend.base_url;
    b["model"] = o.backend.model;
    b["timeout_ms"] = o.backend.timeout_ms;
    b["max_retries"] = o.backend.max_retries;
    b["auth_env"] = o.backend.auth_env;
  }
  j["backend"] = std::move(b);
  return j;
}

inline std::string manifest_text(const RunOptions& o) {
  auto body = manifest_body(o);
  body["config_hash"] = io::hex64(io::fnv1a(manifest_body(o).dump()));
  return body.dump(2) + "\n";
}

inline RunOptions parse_manifest(const std::filesystem::path& path) {
  auto j = json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError(path.string() + ": manifest is not a JSON object");
  }
  try {
    RunOptions o;
    o.method = j.at("method").get<std::string>();
    o.data.labels_path = j.at("labels").get<std::string>();
    o.data.oos_token = j.at("oos_token").get<std::string>();
    o.data.corpus_path = j.at("corpus").get<std::string>();
    o.data.ensemble_path = j.at("ensemble").get<std::string>();
    o.data.runs = j.at("runs").get<std::size_t>();
    o.data.field_map = j.at("field_map").get<std::string>();
    o.router.sigma = j.at("sigma").get<double>();
    o.router.p = j.at("p").get<double>();
    o.router.history = j.at("history").get<std::size_t>();
    o.router.classifier_seconds_per_run = j.at("classifier_seconds_per_run").get<double>();
    o.router.max_parallel = j.at("max_parallel").get<std::size_t>();
    const auto& b = j.at("backend");
    o.backend.kind = b.at("kind").get<std::string>();
    if (o.backend.kind == "stub") {
      o.backend.stub_behavior = b.at("behavior").get<std::string>();
      o.backend.stub_behaviors_path = b.at("behaviors_file").get<std::string>();
      o.backend.seed = b.at("seed").get<std::uint64_t>();
      o.backend.latency.base_seconds = b.at("base_seconds").get<double>();
      o.backend.latency.per_label_seconds = b.at("per_label_seconds").get<double>();
      o.backend.latency.jitter = b.at("jitter").get<double>();
    } else {
      o.backend.base_url = b.at("base_url").get<std::string>();
      o.backend.model = b.at("model").get<std::string>();
      o.backend.timeout_ms = b.at("timeout_ms").get<long long>();
      o.backend.max_retries = b.at("max_retries").get<int>();
      o.backend.auth_env = b.at("auth_env").get<std::string>();
    }
    if (j.contains("config_hash") &&
        j["config_hash"].get<std::string>() != io::hex64(io::fnv1a(manifest_body(o).dump()))) {
      throw ValidationError(path.string() + ": config_hash does not match the manifest contents");
    }
    return o;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed manifest (" + e.what() + ")");
  }
}

struct LoadedData {
  LabelSpace labels;
  Corpus corpus;
  std::optional<EnsembleLog> log;
};

inline LoadedData load_data(const DataOptions& o, bool need_ensemble) {
  if (o.labels_path.empty()) throw ValidationError("--labels is required");
  if (o.corpus_path.empty()) throw ValidationError("--corpus is required");
  LoadedData data{LabelSpace::load(o.labels_path, o.oos_token), {}, std::nullopt};
  const auto fields = o.field_map.empty() ? CorpusFieldMap{} : CorpusFieldMap::parse(o.field_map);
  data.corpus = load_corpus(o.corpus_path, data.labels, fields);
  if (need_ensemble) {
    if (o.ensemble_path.empty()) throw ValidationError("--ensemble is required for this method");
    data.log = load_ensemble_log(o.ensemble_path, data.labels, o.runs);
    for (const auto& d : data.corpus) {
      for (const auto& u : d.utterances) {
        if (!data.log->count(u.key())) {
          throw ValidationError("ensemble log has no record for utterance " + u.key().str());
        }
      }
    }
  }
  return data;
}

inline std::map<UtteranceKey, StubBehavior> load_stub_behaviors(const std::filesystem::path& path) {
  std::map<UtteranceKey, StubBehavior> out;
  io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto record = io::parse_record(path, line_no, line);
    UtteranceKey key{detail::require_string(record, "dialogue_id", where),
                     detail::require_index(record, "turn_index", where)};
    out[key] = StubBehavior::parse(detail::require_string(record, "behavior", where));
  });
  return out;
}

inline std::unique_ptr<LlmBackend> make_backend(const BackendOptions& o, const LoadedData& data,
                                                std::size_t history) {
  if (o.kind == "stub") {
    std::map<UtteranceKey, StubBehavior> overrides;
    if (!o.stub_behaviors_path.empty()) overrides = load_stub_behaviors(o.stub_behaviors_path);
    return std::make_unique<StubLlm>(data.corpus, data.labels, StubBehavior::parse(o.stub_behavior),
                                     std::move(overrides), o.latency, o.seed, history);
  }
  if (o.kind == "http") {
    LlmEndpointConfig config;
    config.base_url = o.base_url;
    config.model_name = o.model;
    config.timeout = std::chrono::milliseconds(o.timeout_ms);
    config.max_retries = o.max_retries;
    if (!o.transcript_path.empty()) config.transcript_path = o.transcript_path;
    config.load_auth_from_env(o.auth_env.c_str());
    return std::make_unique<HttpLlmClient>(std::move(config));
  }
  throw ValidationError("unknown backend '" + o.kind + "' (want stub or http)");
}


/// Loads inputs, validates everything, then routes. No files are written here.
inline std::vector<RoutingDecision> execute(const RunOptions& o, const LoadedData& data, LlmBackend* backend) {
  const auto method = parse_method(o.method);
  return run_method(method, data.corpus, data.log ? &*data.log : nullptr, backend, data.labels, o.router);
}

inline void check_router(const RouterConfig& r) {
  if (!(r.p > 0.0 && r.p <= 1.0)) throw ValidationError("--p must lie in (0, 1]");
  if (std::isnan(r.sigma)) throw ValidationError("--sigma must be a number");
  if (r.max_parallel == 0) throw ValidationError("--parallel must be at least 1");
  if (r.classifier_seconds_per_run < 0) throw ValidationError("--classifier-seconds must be >= 0");
}

/// `run`: decision log at out_path plus <out_path>.manifest.json.
inline int cmd_run(const RunOptions& o, const std::string& out_path, std::ostream& log = std::cout) {
  if (out_path.empty()) throw ValidationError("--out is required");
  const auto method = parse_method(o.method);
  check_router(o.router);
  const auto data = load_data(o.data, uses_ensemble(method));
  std::unique_ptr<LlmBackend> backend;
  if (uses_llm(method)) backend = make_backend(o.backend, data, o.router.history);

  const auto decisions = execute(o, data, backend.get());
  io::write_file_atomic(out_path, serialize_decisions(decisions));
  io::write_file_atomic(out_path + ".manifest.json", manifest_text(o));

  std::size_t routed = 0, calls = 0, failed = 0;
  for (const auto& d : decisions) {
    routed += d.routed;
    calls += d.llm_parse_ok.has_value();
    failed += d.error.has_value();
  }
  log << method_name(method) << ": " << decisions.size() << " decisions, " << routed << " routed, " << calls
      << " LLM calls -> " << out_path << "\n";
  if (failed) {
    log << failed << " LLM call(s) failed; see the error field in the log\n";
    return kTransport;
  }
  return kOk;
}

struct EvalCommandOptions {
  DataOptions data;
  std::string decisions_path;
  std::string baseline_path;              // decision log of the reference method
  std::optional<double> baseline_latency;  // or its average latency directly
  std::string report_path;                // key=value output
  UnkPolicy unk_policy = UnkPolicy::kCountAsError;
};

inline EvalReport run_eval(const EvalCommandOptions& o) {
  if (o.decisions_path.empty()) throw ValidationError("--decisions is required");
  const auto data = load_data(o.data, false);
  const auto decisions = load_decisions(o.decisions_path, data.labels);
  std::optional<double> baseline = o.baseline_latency;
  if (!o.baseline_path.empty()) {
    baseline = average_latency(load_decisions(o.baseline_path, data.labels));
  }
  return evaluate(decisions, data.corpus, data.labels, EvalOptions{o.unk_policy}, baseline);
}

inline int cmd_eval(const EvalCommandOptions& o, std::ostream& out = std::cout) {
  const auto report = run_eval(o);
  out << format_report_table(report);
  if (!o.report_path.empty()) io::write_file_atomic(o.report_path, format_report_kv(report));
  return kOk;
}

struct SweepOptions {
  RunOptions run;
  std::string parameter;  // sigma | p
  std::vector<double> grid;
  std::string out_path;  // CSV; stdout when empty
};

inline constexpr std::string_view kSweepHeader =
    "parameter,value,method,n,routed,llm_calls,avg_set_size,avg_reduction,hit_rate,is_acc,is_wf1,is_wp,full_acc,"
    "full_macro_f1,f1_oos,avg_latency_seconds";

/// `sweep`: one CSV row per grid value, everything else fixed.
inline std::string run_sweep(const SweepOptions& o) {
  if (o.grid.empty()) throw ValidationError("sweep grid is empty");
  if (o.parameter != "sigma" && o.parameter != "p") {
    throw ValidationError("sweep parameter must be sigma or p");
  }
  const auto method = parse_method(o.run.method);
  for (double v : o.grid) {
    RouterConfig probe = o.run.router;
    (o.parameter == "p" ? probe.p : probe.sigma) = v;
    check_router(probe);
  }
  const auto data = load_data(o.run.data, uses_ensemble(method));
  std::unique_ptr<LlmBackend> backend;
  if (uses_llm(method)) backend = make_backend(o.run.backend, data, o.run.router.history);

  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  std::string csv(kSweepHeader);
  csv += '\n';
  std::map<UtteranceKey, std::string> gold;
  for (const auto& d : data.corpus)
    for (const auto& u : d.utterances) gold[u.key()] = u.gold_intent;

  for (double v : o.grid) {
    RunOptions point = o.run;
    (o.parameter == "p" ? point.router.p : point.router.sigma) = v;
    const auto decisions = execute(point, data, backend.get());
    const auto report = evaluate(decisions, data.corpus, data.labels);

    std::vector<ReducedLabelSet> sets;
    std::vector<ReducedLabelSet> is_sets;
    std::vector<std::string> is_golds;
    for (const auto& d : decisions) {
      if (!d.offered_labels) continue;
      sets.push_back(*d.offered_labels);
      const auto& g = gold.at(d.key);
      if (!data.labels.is_oos(g)) {
        is_sets.push_back(*d.offered_labels);
        is_golds.push_back(g);
      }
    }
    std::string set_cols = ",,";
    if (!sets.empty()) {
      const auto stats = reduction_stats(sets, data.labels.m());
      set_cols = num(stats.avg_set_size) + "," + num(stats.avg_reduction) + ",";
      if (!is_sets.empty()) set_cols += num(hit_rate(is_sets, is_golds));
    }
    csv += o.parameter + "," + num(v) + "," + std::string(method_name(method)) + "," +
           std::to_string(report.n_total) + "," + std::to_string(report.routed) + "," +
           std::to_string(report.llm_calls) + "," + set_cols + "," + num(report.in_scope.acc) + "," +
           num(report.in_scope.wf1) + "," + num(report.in_scope.wp) + "," + num(report.full.acc) + "," +
           num(report.full.macro_f1) + "," + num(report.full.f1_oos) + "," + num(report.avg_latency_seconds) + "\n";
  }
  return csv;
}

inline int cmd_sweep(const SweepOptions& o, std::ostream& out = std::cout) {
  const auto csv = run_sweep(o);
  if (o.out_path.empty()) {
    out << csv;
  } else {
    io::write_file_atomic(o.out_path, csv);
  }
  return kOk;
}

/// `synth`: labels.txt, corpus.jsonl and ensemble.jsonl under out_dir.
inline int cmd_synth(const SynthConfig& config, const std::filesystem::path& out_dir, std::ostream& out = std::cout) {
  config.validate();
  const auto data = synthesize(config);
  std::filesystem::create_directories(out_dir);
  io::write_file_atomic(out_dir / "labels.txt", data.labels.to_file_text());
  io::write_file_atomic(out_dir / "corpus.jsonl", serialize_corpus(data.corpus));
  io::write_file_atomic(out_dir / "ensemble.jsonl", serialize_ensemble_log(data.log, data.labels));
  out << "wrote " << data.corpus.size() << " dialogues, " << utterance_count(data.corpus) << " utterances, "
      << config.runs << " runs to " << out_dir.string() << "\n";
  return kOk;
}

/// `validate`: loads and cross-checks inputs, reports counts.
inline int cmd_validate(const DataOptions& o, std::ostream& out = std::cout) {
  const auto data = load_data(o, !o.ensemble_path.empty());
  std::map<std::string, std::size_t> histogram;
  for (const auto& d : data.corpus)
    for (const auto& u : d.utterances) ++histogram[u.gold_intent];
  out << "labels: " << data.labels.m() << " in-scope + " << data.labels.oos_token() << "\n";
  out << "corpus: " << data.corpus.size() << " dialogues, " << utterance_count(data.corpus) << " utterances\n";
  for (const auto& [label, n] : histogram) out << "  " << label << ": " << n << "\n";
  if (data.log) out << "ensemble: " << data.log->size() << " records x " << o.runs << " runs\n";
  return kOk;
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return kValidation;
  if (dynamic_cast<const TransportError*>(&e)) return kTransport;
  return kInternal;
}

}  // namespace cascade::app
