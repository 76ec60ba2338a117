#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/error.hpp"
#include "cascade/io.hpp"
#include "cascade/label_space.hpp"
#include "cascade/llm.hpp"
#include "cascade/prompting.hpp"

namespace cascade {

/// How the stub answers one utterance.
struct StubBehavior {
  enum class Kind { kAlwaysGoldIfOffered, kFixedLabel, kMalformed };

  Kind kind = Kind::kAlwaysGoldIfOffered;
  std::string label;  // kFixedLabel only

  static StubBehavior oracle() { return {}; }
  static StubBehavior fixed(std::string label) { return {Kind::kFixedLabel, std::move(label)}; }
  static StubBehavior malformed() { return {Kind::kMalformed, {}}; }

  /// "oracle", "fixed:<label>" or "malformed".
  static StubBehavior parse(std::string_view text) {
    if (text == "oracle") return oracle();
    if (text == "malformed") return malformed();
    if (text.substr(0, 6) == "fixed:" && text.size() > 6) return fixed(std::string(text.substr(6)));
    throw ValidationError("unknown stub behavior '" + std::string(text) +
                          "' (want oracle, fixed:<label> or malformed)");
  }

  std::string str() const {
    switch (kind) {
      case Kind::kAlwaysGoldIfOffered: return "oracle";
      case Kind::kFixedLabel: return "fixed:" + label;
      case Kind::kMalformed: return "malformed";
    }
    return "oracle";
  }

  bool operator==(const StubBehavior&) const = default;
};

/// Synthetic latency: base + per_label * |offered|, scaled by a uniform factor in
/// [1 - jitter, 1 + jitter]. Longer candidate lists cost more, as longer prompts do.
struct StubLatencyModel {
  double base_seconds = 1.5;
  double per_label_seconds = 0.05;
  double jitter = 0.1;
};

inline constexpr std::string_view kMalformedReply = "I think the speaker wants something, but I cannot tell what.";

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline std::string prompt_identity(const std::vector<std::string>& history, std::string_view utterance) {
  std::string id;
  for (const auto& line : history) {
    id += one_line(line);
    id += '\x1f';
  }
  id += '\x1e';
  id += utterance;
  return id;
}

}  // namespace detail

/// Deterministic in-process LLM. It recognises which corpus utterance a prompt is about from
/// the rendered history and utterance slots, then answers per that utterance's behavior.
/// Replies and latencies depend only on (seed, utterance, prompt), never on call order.
class StubLlm final : public LlmBackend {
 public:
  StubLlm(const Corpus& corpus, const LabelSpace& labels, StubBehavior default_behavior = {},
          std::map<UtteranceKey, StubBehavior> overrides = {}, StubLatencyModel latency = {},
          std::uint64_t seed = 0, std::size_t history = kDefaultHistory)
      : oos_token_(labels.oos_token()),
        default_behavior_(std::move(default_behavior)),
        latency_(latency),
        seed_(seed) {
    auto check = [&](const StubBehavior& b) {
      if (b.kind == StubBehavior::Kind::kFixedLabel && b.label.empty()) {
        throw ConfigError("fixed stub behavior needs a label");
      }
    };
    check(default_behavior_);
    for (const auto& dialogue : corpus) {
      for (const auto& u : dialogue.utterances) {
        auto window = build_context(dialogue, u.turn_index, history);
        auto spec = make_prompt_spec(window, {}, oos_token_);
        Entry entry{u.key(), u.gold_intent, default_behavior_};
        if (auto it = overrides.find(u.key()); it != overrides.end()) {
          check(it->second);
          entry.behavior = it->second;
          overrides.erase(it);
        }
        index_[detail::prompt_identity(spec.history_lines, spec.utterance)].push_back(std::move(entry));
      }
    }
    if (!overrides.empty()) {
      throw ConfigError("stub behavior given for unknown utterance " + overrides.begin()->first.str());
    }
  }

  TimedResponse complete(const std::string& prompt) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    auto spec = parse_prompt(prompt);
    if (!spec) {
      throw ConfigError("stub cannot parse prompt (not rendered by this library?)");
    }
    auto it = index_.find(detail::prompt_identity(spec->history_lines, spec->utterance));
    if (it == index_.end()) {
      throw ConfigError("stub has no utterance matching prompt for '" + spec->utterance + "'");
    }
    const Entry& entry = it->second.front();
    for (const auto& other : it->second) {
      if (other.gold != entry.gold || !(other.behavior == entry.behavior)) {
        throw ConfigError("stub cannot tell apart utterances " + entry.key.str() + " and " +
                          other.key.str() + " from their prompts");
      }
    }

    std::string reply;
    switch (entry.behavior.kind) {
      case StubBehavior::Kind::kAlwaysGoldIfOffered: {
        const bool offered = entry.gold == spec->oos_token ||
                             std::find(spec->labels.begin(), spec->labels.end(), entry.gold) !=
                                 spec->labels.end();
        reply = format_reply(offered ? entry.gold : spec->oos_token);
        break;
      }
      case StubBehavior::Kind::kFixedLabel:
        reply = format_reply(entry.behavior.label);
        break;
      case StubBehavior::Kind::kMalformed:
        reply = std::string(kMalformedReply);
        break;
    }

    const auto bits = detail::splitmix64(seed_ ^ io::fnv1a(prompt, io::fnv1a(entry.key.str())));
    const double factor = 1.0 + latency_.jitter * (2.0 * detail::unit_interval(bits) - 1.0);
    const double seconds =
        (latency_.base_seconds + latency_.per_label_seconds * static_cast<double>(spec->labels.size())) *
        factor;
    return TimedResponse{std::move(reply), std::max(seconds, 0.0), 1};
  }

  std::string describe() const override {
    return "stub default=" + default_behavior_.str() + " seed=" + std::to_string(seed_);
  }

  std::size_t calls() const noexcept { return calls_.load(std::memory_order_relaxed); }

 private:
  struct Entry {
    UtteranceKey key;
    std::string gold;
    StubBehavior behavior;
  };

  std::string oos_token_;
  StubBehavior default_behavior_;
  StubLatencyModel latency_;
  std::uint64_t seed_;
  std::unordered_map<std::string, std::vector<Entry>> index_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace cascade
