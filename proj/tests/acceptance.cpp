// Acceptance gate: one PASS/FAIL line per headline criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "cascade/app.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cascade;

namespace {

int failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

void lsr_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  const std::vector<double> grid = {0.5, 0.85, 0.95, 0.99};
  std::size_t mismatches = 0, non_monotone = 0;
  for (int trial = 0; trial < 10'000; ++trial) {
    const std::size_t m = 1 + rng() % 30;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < m; ++i) names.push_back("l" + std::to_string(i));
    LabelSpace labels(names);
    const auto probs = ct::random_simplex(rng, m, trial % 4 == 0);
    std::vector<std::size_t> previous;
    for (double p : grid) {
      const auto k = reduce_label_space(probs, labels, p);
      if (k.indices != oracle::reduce(probs, p)) ++mismatches;
      for (auto idx : previous) {
        if (std::find(k.indices.begin(), k.indices.end(), idx) == k.indices.end()) {
          ++non_monotone;
          break;
        }
      }
      previous = k.indices;
    }
  }
  const double elapsed = seconds_since(start);
  report(mismatches == 0 && non_monotone == 0 && elapsed < 10.0, "lsr-oracle",
         "40000 reductions, " + std::to_string(mismatches) + " oracle mismatches, " + std::to_string(non_monotone) +
             " monotonicity breaks, " + fmt("%.2f s", elapsed));
}

void metric_oracle() {
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng() % 30;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < m; ++i) names.push_back("c" + std::to_string(i));
    LabelSpace labels(names);
    const auto all = labels.all();
    const std::size_t n = 1 + rng() % 400;
    std::vector<std::string> golds(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      golds[i] = all[rng() % all.size()];
      preds[i] = rng() % 2 ? golds[i] : all[rng() % all.size()];
    }
    golds[0] = names[rng() % m];
    const auto is = is_metrics(preds, golds, labels);
    const auto is_ref = oracle::in_scope(preds, golds, names, labels.oos_token());
    const auto full = full_metrics(preds, golds, labels);
    const auto full_ref = oracle::full(preds, golds, all, labels.oos_token());
    for (double diff : {is.acc - is_ref.acc, is.wf1 - is_ref.wf1, is.wp - is_ref.wp, full.acc - full_ref.acc,
                        full.macro_f1 - full_ref.macro_f1, full.f1_oos - full_ref.f1_oos}) {
      worst = std::max(worst, std::abs(diff));
    }
  }
  LabelSpace ab({"a", "b"});
  const auto hand = is_metrics(std::vector<std::string>{"a", "b", "b", "b"},
                               std::vector<std::string>{"a", "a", "b", "b"}, ab);
  const bool hand_ok = std::abs(hand.wf1 - 0.7333) < 5e-5 && std::abs(hand.wp - 0.8333) < 5e-5;
  report(worst <= 1e-9 && hand_ok, "metric-oracle",
         fmt("1000 fixtures, max |diff| %.1e; 2-class WF1 %.4f WP %.4f", worst, hand.wf1, hand.wp));
}

void latency_ratios() {
  struct Row {
    double avg, baseline;
    const char* expected;
  };
  const Row rows[] = {{0.065, 1.925, "0.034"}, {1.100, 1.925, "0.571"}, {0.065, 4.039, "0.016"}, {2.236, 4.039, "0.553"}};
  bool ok = true;
  std::string got;
  for (const auto& r : rows) {
    const auto s = fixed3(latency_from_average(r.avg, r.baseline).latency_ratio);
    ok = ok && s == r.expected;
    got += (got.empty() ? "" : ", ") + s;
  }
  report(ok, "latency-ratios", got);
}

struct SynthFiles {
  ct::TempDir dir;
  app::RunOptions opts;
  SynthConfig config;
};

void routing_antitone(const SynthFiles& synth, const app::LoadedData& data) {
  const std::vector<double> sigmas = {0.02, 0.05, 0.10, 0.12, 0.20};
  std::vector<std::set<UtteranceKey>> routed_sets;
  for (double sigma : sigmas) {
    RouterConfig cfg;
    cfg.sigma = sigma;
    std::set<UtteranceKey> routed;
    for (const auto& d : run_bert_only(data.corpus, *data.log, data.labels, cfg)) {
      if (should_route(EnsembleSummary{0, {}, {}, *d.uncertainty, {}, 0}, sigma)) routed.insert(d.key);
    }
    routed_sets.push_back(std::move(routed));
  }
  bool antitone = true;
  std::string sizes;
  for (std::size_t i = 0; i < routed_sets.size(); ++i) {
    sizes += (i ? "/" : "") + std::to_string(routed_sets[i].size());
    if (i == 0) continue;
    for (const auto& key : routed_sets[i]) antitone = antitone && routed_sets[i - 1].count(key);
  }
  const double n = double(utterance_count(data.corpus));
  const double fraction = double(routed_sets[3].size()) / n;
  const bool near = std::abs(fraction - synth.config.uncertain_fraction) <= 0.05;
  report(antitone && near, "routing-antitone",
         "routed " + sizes + fmt(" of %.0f; at sigma 0.12 %.4f vs configured %.2f", n, fraction,
                                 synth.config.uncertain_fraction));
}

void cascade_gain(const app::LoadedData& data) {
  const auto start = std::chrono::steady_clock::now();
  StubLlm stub(data.corpus, data.labels);
  RouterConfig cfg;
  const auto bert = run_bert_only(data.corpus, *data.log, data.labels, cfg);
  const auto lsr = run_routed(data.corpus, *data.log, stub, data.labels, cfg, true);
  const double bert_acc = evaluate(bert, data.corpus, data.labels).in_scope.acc;
  const double lsr_acc = evaluate(lsr, data.corpus, data.labels).in_scope.acc;

  std::map<UtteranceKey, std::string> gold;
  for (const auto& d : data.corpus)
    for (const auto& u : d.utterances) gold[u.key()] = u.gold_intent;
  std::vector<ReducedLabelSet> sets;
  std::vector<std::string> golds;
  for (const auto& d : lsr) {
    if (d.routed && !data.labels.is_oos(gold.at(d.key))) {
      sets.push_back(*d.offered_labels);
      golds.push_back(gold.at(d.key));
    }
  }
  const double hits = hit_rate(sets, golds);

  cfg.p = 1.0;
  const auto full_lsr = run_routed(data.corpus, *data.log, stub, data.labels, cfg, true);
  const auto plain = run_routed(data.corpus, *data.log, stub, data.labels, cfg, false);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < plain.size(); ++i) differing += plain[i].final_label != full_lsr[i].final_label;
  const double elapsed = seconds_since(start);
  report(lsr_acc > bert_acc && hits >= 0.90 && differing == 0 && elapsed < 30.0, "cascade-gain",
         fmt("IS acc routed-lsr %.4f > bert-only %.4f; hit rate %.4f at P=0.85; ", lsr_acc, bert_acc, hits) +
             std::to_string(differing) + " label differences routed-lsr vs routed at P=1.0; " +
             fmt("%.2f s", elapsed));
}

void prompt_fidelity() {
  const std::vector<std::string> labels = {"greet", "give_name", "ask_location", "request_appointment_time"};
  const std::vector<std::string> history = {"Hello, we have an appointment with Dr. Martin.",
                                            "Good morning, may I have your name?", "It is for my wife, Claire Dubois."};
  const std::vector<std::pair<PromptSpec, std::string>> fixtures = {
      {PromptSpec{labels, "UNK", history, "Where is the waiting room?"}, "full_labels.txt"},
      {PromptSpec{{"ask_location", "request_appointment_time"}, "UNK", history, "Where is the waiting room?"},
       "reduced_labels.txt"},
      {PromptSpec{labels, "UNK", {}, "Hello, is anyone at the desk?"}, "empty_history.txt"}};
  int golden_ok = 0;
  for (const auto& [spec, file] : fixtures) {
    golden_ok += render_prompt(spec) == io::read_file(ct::source_path("tests/golden/" + file));
  }

  const std::vector<std::string> offered = {"greet", "a\"b", "{x}", "back\\slash", "caf\xc3\xa9", "UNK_ish", "tab\tin"};
  const std::vector<std::pair<std::string, std::string>> wrappers = {
      {"", ""}, {"```json\n", "\n```"}, {"Answer: ", "."}, {"<think>{\"intent\": \"greet\"}</think>\n", ""}};
  int round_trips = 0, attempts = 0;
  for (const auto& label : offered) {
    for (const auto& [pre, post] : wrappers) {
      ++attempts;
      const auto v = parse_verdict(pre + format_reply(label) + post, offered, "UNK");
      round_trips += v.parse_ok && v.parsed_label == label;
    }
  }

  std::mt19937_64 rng(7);
  const std::string alphabet = "{}[]\":,\\ intentUNKgret\n`";
  int threw = 0;
  for (int i = 0; i < 10'000; ++i) {
    std::string raw;
    const std::size_t len = rng() % 160;
    for (std::size_t j = 0; j < len; ++j) {
      raw += rng() % 8 ? alphabet[rng() % alphabet.size()] : static_cast<char>(rng() % 256);
    }
    try {
      (void)parse_verdict(raw, offered, "UNK");
    } catch (...) {
      ++threw;
    }
  }
  report(golden_ok == 3 && round_trips == attempts && threw == 0, "prompt-fidelity",
         std::to_string(golden_ok) + "/3 golden prompts, " + std::to_string(round_trips) + "/" +
             std::to_string(attempts) + " replies round-tripped, " + std::to_string(threw) +
             " throws on 10000 fuzzed strings");
}

void determinism(SynthFiles& synth) {
  std::ostringstream sink;
  auto opts = synth.opts;
  opts.method = "routed-lsr";
  opts.backend.seed = 1234;
  const auto a = (synth.dir / "det_a.jsonl").string();
  const auto b = (synth.dir / "det_b.jsonl").string();
  app::cmd_run(opts, a, sink);
  app::cmd_run(app::parse_manifest(a + ".manifest.json"), b, sink);
  const auto first = io::read_file(a);
  const bool same = first == io::read_file(b);
  report(same && !first.empty(), "determinism",
         std::string(same ? "identical" : "different") + " decision logs from one manifest (" +
             std::to_string(first.size()) + " bytes)");
}

}  // namespace

int main() {
  try {
    lsr_oracle();
    metric_oracle();
    latency_ratios();

    SynthFiles synth;
    std::ostringstream sink;
    synth.config.n_utterances = 10'000;
    synth.config.n_dialogues = 400;
    app::cmd_synth(synth.config, synth.dir.path(), sink);
    synth.opts.data.labels_path = (synth.dir / "labels.txt").string();
    synth.opts.data.corpus_path = (synth.dir / "corpus.jsonl").string();
    synth.opts.data.ensemble_path = (synth.dir / "ensemble.jsonl").string();
    const auto data = app::load_data(synth.opts.data, true);

    routing_antitone(synth, data);
    cascade_gain(data);
    prompt_fidelity();
    determinism(synth);
  } catch (const std::exception& e) {
    report(false, "harness", e.what());
  }
  std::printf("%s\n", failures ? "acceptance: FAILED" : "acceptance: all criteria passed");
  return failures ? 1 : 0;
}
