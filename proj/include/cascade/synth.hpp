#pragma once

#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <utility>
#include <random>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/ensemble.hpp"
#include "cascade/error.hpp"
#include "cascade/label_space.hpp"

namespace cascade {

/// Desk-scale stand-in for a fine-tuned classifier ensemble.
///
/// Each utterance is either confident (every run puts 0.75..0.95 on the gold label, so the
/// vote-label std stays below ~0.11) or uncertain (the runs split between two labels A and B,
/// pushing the vote-label std above ~0.17 at noise 1). Gold-OOS utterances are always
/// uncertain; in-scope ones are uncertain with the probability needed to reach
/// `uncertain_fraction` overall. For uncertain in-scope utterances the gold label is A or B
/// with probability `hit_rate`, otherwise it gets a near-zero tail mass that cumulative-mass
/// reduction drops. noise = 0 gives identical runs everywhere.
struct SynthConfig {
  std::size_t n_dialogues = 400;
  std::size_t n_utterances = 10'000;
  std::size_t m = 8;
  double oos_fraction = 0.22;
  double uncertain_fraction = 0.30;
  double hit_rate = 0.92;
  std::size_t runs = kDefaultRuns;
  double noise = 1.0;
  std::uint64_t seed = 7;

  void validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("synth: " + msg); };
    if (n_dialogues == 0) fail("need at least one dialogue");
    if (n_utterances < n_dialogues) fail("need at least one utterance per dialogue");
    if (m < 4) fail("need at least 4 in-scope labels");
    if (!(oos_fraction >= 0.0 && oos_fraction < 1.0)) fail("oos_fraction must lie in [0, 1)");
    if (!(uncertain_fraction >= oos_fraction && uncertain_fraction <= 1.0))
      fail("uncertain_fraction must lie in [oos_fraction, 1]");
    if (!(hit_rate >= 0.0 && hit_rate <= 1.0)) fail("hit_rate must lie in [0, 1]");
    if (!(noise >= 0.0 && noise <= 1.0)) fail("noise must lie in [0, 1]");
    if (runs < 3 && noise > 0.0 && uncertain_fraction > 0.0) fail("split-vote utterances need at least 3 runs");
    if (runs == 0) fail("need at least one run");
  }
};

/// What the generator intended, kept for tests.
struct SynthTruth {
  bool uncertain = false;
  bool gold_offered = true;  // gold is A or B (or the utterance is confident)
};

struct SynthData {
  LabelSpace labels;
  Corpus corpus;
  EnsembleLog log;
  std::vector<SynthTruth> truth;  // corpus order
};

namespace detail {

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(unit() * static_cast<double>(n)); }
  bool chance(double p) { return unit() < p; }

 private:
  std::mt19937_64 engine_;
};

inline const std::vector<std::string>& synth_words() {
  static const std::vector<std::string> words = {
      "could",   "you",      "tell",   "me",     "where", "the",     "lift",   "is",      "thanks",
      "okay",    "we",       "need",   "to",     "find",  "doctor",  "room",   "waiting", "how",
      "long",    "will",     "it",     "take",   "hello", "sorry",   "what",   "about",   "coffee",
      "my",      "wife",     "has",    "an",     "appointment", "at", "ten", "great",   "yes"};
  return words;
}

}  // namespace detail

inline SynthData synthesize(const SynthConfig& config) {
  config.validate();
  detail::SynthRng rng(config.seed);

  std::vector<std::string> names;
  const int width = static_cast<int>(std::to_string(config.m).size());
  for (std::size_t i = 1; i <= config.m; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "intent_%0*zu", width, i);
    names.emplace_back(buf);
  }
  SynthData data{LabelSpace(names), {}, {}, {}};
  const auto& labels = data.labels;
  const std::size_t m = config.m;
  const std::size_t r_count = config.runs;
  const double in_scope_uncertain =
      config.oos_fraction < 1.0 ? (config.uncertain_fraction - config.oos_fraction) / (1.0 - config.oos_fraction) : 0.0;
  static const std::vector<std::string> speakers = {"guest_a", "guest_b", "receptionist"};

  const std::size_t base = config.n_utterances / config.n_dialogues;
  const std::size_t extra = config.n_utterances % config.n_dialogues;

  for (std::size_t d = 0; d < config.n_dialogues; ++d) {
    char id[32];
    std::snprintf(id, sizeof id, "dlg_%05zu", d);
    Dialogue dialogue{id, {}};
    const std::size_t turns = base + (d < extra ? 1 : 0);
    for (std::size_t t = 0; t < turns; ++t) {
      Utterance u;
      u.dialogue_id = id;
      u.turn_index = static_cast<std::int64_t>(t);
      u.speaker = speakers[rng.below(speakers.size())];
      const std::size_t n_words = 3 + rng.below(6);
      for (std::size_t w = 0; w < n_words; ++w) {
        u.text += detail::synth_words()[rng.below(detail::synth_words().size())];
        u.text += ' ';
      }
      u.text += "(" + std::string(id) + " turn " + std::to_string(t) + ")";

      const bool is_oos = rng.chance(config.oos_fraction);
      const std::size_t gold_idx = rng.below(m);
      u.gold_intent = is_oos ? labels.oos_token() : labels.in_scope()[gold_idx];
      SynthTruth truth;
      truth.uncertain = config.noise > 0.0 && (is_oos || rng.chance(in_scope_uncertain));

      // Residual weights shared by every run, so noise = 0 yields identical runs.
      std::vector<double> weights(m);
      for (auto& w : weights) w = 0.5 + rng.unit();

      EnsembleRecord record{u.key(), std::vector<std::vector<double>>(r_count, std::vector<double>(m, 0.0))};
      auto fill_residual = [&](std::vector<double>& vec, const std::vector<bool>& fixed, double residual) {
        double wsum = 0.0;
        for (std::size_t j = 0; j < m; ++j)
          if (!fixed[j]) wsum += weights[j];
        for (std::size_t j = 0; j < m; ++j)
          if (!fixed[j]) vec[j] = residual * weights[j] / wsum;
      };

      if (!truth.uncertain) {
        const std::size_t primary = is_oos ? rng.below(m) : gold_idx;
        std::vector<bool> fixed(m, false);
        fixed[primary] = true;
        for (auto& vec : record.runs) {
          const double p = 0.85 + 0.1 * config.noise * (2.0 * rng.unit() - 1.0);
          vec[primary] = p;
          fill_residual(vec, fixed, 1.0 - p);
        }
      } else {
        std::size_t a = rng.below(m);
        std::size_t b = (a + 1 + rng.below(m - 1)) % m;
        std::optional<std::size_t> tail;
        if (!is_oos) {
          truth.gold_offered = rng.chance(config.hit_rate);
          if (truth.gold_offered) {
            if (gold_idx != a && gold_idx != b) {
              (rng.chance(0.5) ? a : b) = gold_idx;
            }
          } else {
            while (a == gold_idx || b == gold_idx || a == b) {
              a = rng.below(m);
              b = (a + 1 + rng.below(m - 1)) % m;
            }
            tail = gold_idx;
          }
        }
        // nA > nB >= 1 runs favour A and B respectively, in shuffled order.
        const std::size_t n_b = (r_count - 1) / 2;
        std::vector<char> favours_b(r_count, 0);
        for (std::size_t i = 0; i < n_b; ++i) favours_b[i] = 1;
        for (std::size_t i = r_count - 1; i > 0; --i) {
          std::swap(favours_b[i], favours_b[rng.below(i + 1)]);
        }
        std::vector<bool> fixed(m, false);
        fixed[a] = fixed[b] = true;
        if (tail) fixed[*tail] = true;
        for (std::size_t r = 0; r < r_count; ++r) {
          auto& vec = record.runs[r];
          const double hi = 0.55 + 0.23 * rng.unit();
          const double raw_lo = 0.02 + 0.16 * rng.unit();
          double lo = hi - config.noise * (hi - raw_lo);
          double top = hi;
          if (top + lo > 0.96) {  // low noise: keep room for the residual labels
            const double scale = 0.96 / (top + lo);
            top *= scale;
            lo *= scale;
          }
          vec[a] = favours_b[r] ? lo : top;
          vec[b] = favours_b[r] ? top : lo;
          double residual = 1.0 - top - lo;
          if (tail) {
            vec[*tail] = 0.002;
            residual -= 0.002;
          }
          fill_residual(vec, fixed, residual);
        }
      }

      data.log.emplace(u.key(), std::move(record));
      data.truth.push_back(truth);
      dialogue.utterances.push_back(std::move(u));
    }
    data.corpus.push_back(std::move(dialogue));
  }
  return data;
}

}  // namespace cascade
