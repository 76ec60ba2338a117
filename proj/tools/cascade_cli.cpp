// cascade: command-line front end for the hybrid intent cascade.
//
//   cascade synth    --out-dir data/
//   cascade validate --labels data/labels.txt --corpus data/corpus.jsonl --ensemble data/ensemble.jsonl
//   cascade run      --method routed-lsr ... --out decisions.jsonl
//   cascade eval     --decisions decisions.jsonl ...
//   cascade sweep    --param p --grid 0.5,0.85,0.95,0.99 ...
//
// Every subcommand accepts --config FILE with key=value lines (same names as the long flags,
// without dashes). Flags on the command line win over the file.

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cascade/app.hpp"

namespace {

using namespace cascade;

void add_data_options(CLI::App& cmd, app::DataOptions& o, bool with_ensemble) {
  cmd.add_option("--labels", o.labels_path, "In-scope label file, one label per line");
  cmd.add_option("--oos-token", o.oos_token, "Out-of-scope label")->capture_default_str();
  cmd.add_option("--corpus", o.corpus_path, "Corpus JSONL");
  cmd.add_option("--field-map", o.field_map, "Rename corpus fields, e.g. intent=label,text=utterance");
  if (with_ensemble) {
    cmd.add_option("--ensemble", o.ensemble_path, "Per-run probability log JSONL");
    cmd.add_option("--runs", o.runs, "Classifier runs per utterance")->capture_default_str();
  }
}

void add_run_options(CLI::App& cmd, app::RunOptions& o) {
  cmd.add_option("--method", o.method, "bert-only | llm-only | routed | routed-lsr")->capture_default_str();
  add_data_options(cmd, o.data, true);
  cmd.add_option("--sigma", o.router.sigma, "Uncertainty threshold (strictly greater routes)")->capture_default_str();
  cmd.add_option("--p", o.router.p, "Cumulative mass kept by label space reduction")->capture_default_str();
  cmd.add_option("--history", o.router.history, "Preceding turns shown to the LLM")->capture_default_str();
  cmd.add_option("--classifier-seconds", o.router.classifier_seconds_per_run,
                 "Classifier latency charged per run")
      ->capture_default_str();
  cmd.add_option("--parallel", o.router.max_parallel, "Concurrent LLM calls")->capture_default_str();
  cmd.add_option("--backend", o.backend.kind, "stub | http")->capture_default_str();
  cmd.add_option("--stub", o.backend.stub_behavior, "oracle | fixed:<label> | malformed")->capture_default_str();
  cmd.add_option("--stub-behaviors", o.backend.stub_behaviors_path, "Per-utterance stub behaviors JSONL");
  cmd.add_option("--seed", o.backend.seed, "Stub seed")->capture_default_str();
  cmd.add_option("--stub-base-seconds", o.backend.latency.base_seconds)->capture_default_str();
  cmd.add_option("--stub-per-label-seconds", o.backend.latency.per_label_seconds)->capture_default_str();
  cmd.add_option("--stub-jitter", o.backend.latency.jitter)->capture_default_str();
  cmd.add_option("--base-url", o.backend.base_url, "Chat-completions base URL, e.g. http://host:8000/v1");
  cmd.add_option("--model", o.backend.model, "Model name sent to the endpoint");
  cmd.add_option("--timeout-ms", o.backend.timeout_ms)->capture_default_str();
  cmd.add_option("--max-retries", o.backend.max_retries)->capture_default_str();
  cmd.add_option("--transcript", o.backend.transcript_path, "Append request/response pairs to this JSONL");
  cmd.add_option("--auth-env", o.backend.auth_env, "Environment variable holding the bearer token")
      ->capture_default_str();
}

// Expands "--config FILE" into "--key=value" arguments placed before the user's own flags,
// so the later (explicit) occurrence wins.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    std::size_t span = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      span = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      span = 1;
    } else {
      continue;
    }
    std::vector<std::string> injected;
    io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
      auto first = line.find_first_not_of(" \t");
      if (line[first] == '#') return;
      auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ValidationError(path + ":" + std::to_string(line_no) + ": expected key=value");
      }
      auto trim = [](std::string_view s) {
        auto b = s.find_first_not_of(" \t");
        auto e = s.find_last_not_of(" \t");
        return b == std::string_view::npos ? std::string() : std::string(s.substr(b, e - b + 1));
      };
      injected.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    });
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
    // Insert right after the subcommand name (args[0] is the subcommand).
    args.insert(args.begin() + 1, injected.begin(), injected.end());
    break;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Hybrid intent-recognition cascade: classifier ensemble + LLM with label space reduction"};
  cli.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  cli.require_subcommand(1);

  app::RunOptions run_opts;
  std::string run_out;
  std::string run_manifest;
  auto* run = cli.add_subcommand("run", "Route a corpus with one method and write a decision log");
  add_run_options(*run, run_opts);
  run->add_option("--out", run_out, "Decision log path (manifest goes to <out>.manifest.json)");
  run->add_option("--manifest", run_manifest, "Replay a previous run's manifest");

  app::EvalCommandOptions eval_opts;
  std::string unk_policy = "error";
  auto* eval = cli.add_subcommand("eval", "Score a decision log against corpus gold labels");
  add_data_options(*eval, eval_opts.data, false);
  eval->add_option("--decisions", eval_opts.decisions_path, "Decision log to score");
  eval->add_option("--baseline", eval_opts.baseline_path, "Decision log of the latency reference (e.g. llm-only)");
  eval->add_option("--baseline-latency", eval_opts.baseline_latency, "Reference average latency in seconds");
  eval->add_option("--report", eval_opts.report_path, "Write key=value metrics here");
  eval->add_option("--unk-policy", unk_policy, "error | exclude: OOS predictions on in-scope golds")
      ->capture_default_str();

  app::SweepOptions sweep_opts;
  std::string grid_text;
  auto* sweep = cli.add_subcommand("sweep", "Re-run one method over a grid of sigma or p values, CSV out");
  add_run_options(*sweep, sweep_opts.run);
  sweep->add_option("--param", sweep_opts.parameter, "sigma | p");
  sweep->add_option("--grid", grid_text, "Comma-separated values");
  sweep->add_option("--out", sweep_opts.out_path, "CSV path (stdout when omitted)");

  SynthConfig synth_cfg;
  std::string synth_dir = "synth";
  auto* synth = cli.add_subcommand("synth", "Generate a seeded corpus, label file and ensemble log");
  synth->add_option("--dialogues", synth_cfg.n_dialogues)->capture_default_str();
  synth->add_option("--utterances", synth_cfg.n_utterances)->capture_default_str();
  synth->add_option("--m", synth_cfg.m, "In-scope label count")->capture_default_str();
  synth->add_option("--oos-fraction", synth_cfg.oos_fraction)->capture_default_str();
  synth->add_option("--uncertain-fraction", synth_cfg.uncertain_fraction)->capture_default_str();
  synth->add_option("--hit-rate", synth_cfg.hit_rate, "Uncertain in-scope golds kept among the top labels")
      ->capture_default_str();
  synth->add_option("--runs", synth_cfg.runs)->capture_default_str();
  synth->add_option("--noise", synth_cfg.noise, "0 = identical runs, 1 = full disagreement")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();
  synth->add_option("--out-dir", synth_dir)->capture_default_str();

  app::DataOptions validate_opts;
  auto* validate = cli.add_subcommand("validate", "Check a label file, corpus and optional ensemble log");
  add_data_options(*validate, validate_opts, true);

  std::string config_path;  // consumed by expand_config before parsing
  for (auto* cmd : {run, eval, sweep, synth, validate}) {
    cmd->add_option("--config", config_path, "key=value file; explicit flags win");
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    try {
      cli.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = cli.exit(e);
      return code == 0 ? 0 : app::kValidation;
    }

    if (run->parsed()) {
      if (!run_manifest.empty()) run_opts = app::parse_manifest(run_manifest);
      return app::cmd_run(run_opts, run_out);
    }
    if (eval->parsed()) {
      if (unk_policy == "error") eval_opts.unk_policy = UnkPolicy::kCountAsError;
      else if (unk_policy == "exclude") eval_opts.unk_policy = UnkPolicy::kExclude;
      else throw ValidationError("--unk-policy must be error or exclude");
      return app::cmd_eval(eval_opts);
    }
    if (sweep->parsed()) {
      for (const auto& item : CLI::detail::split(grid_text, ',')) {
        if (item.empty()) continue;
        try {
          sweep_opts.grid.push_back(std::stod(item));
        } catch (const std::exception&) {
          throw ValidationError("bad grid value '" + item + "'");
        }
      }
      return app::cmd_sweep(sweep_opts);
    }
    if (synth->parsed()) return app::cmd_synth(synth_cfg, synth_dir);
    if (validate->parsed()) return app::cmd_validate(validate_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::exit_code_for(e);
  }
  return app::kInternal;
}
