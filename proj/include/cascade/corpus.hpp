#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/io.hpp"
#include "cascade/label_space.hpp"

namespace cascade {

inline constexpr std::string_view kTurnShiftToken = "<ts>";
inline constexpr std::size_t kDefaultHistory = 3;

struct UtteranceKey {
  std::string dialogue_id;
  std::int64_t turn_index = 0;

  auto operator<=>(const UtteranceKey&) const = default;

  std::string str() const { return dialogue_id + "#" + std::to_string(turn_index); }
};

struct UtteranceKeyHash {
  std::size_t operator()(const UtteranceKey& key) const noexcept {
    return static_cast<std::size_t>(
        io::fnv1a(std::to_string(key.turn_index), io::fnv1a(key.dialogue_id)));
  }
};

struct Utterance {
  std::string dialogue_id;
  std::int64_t turn_index = 0;
  std::string speaker;
  std::string text;
  std::string gold_intent;

  UtteranceKey key() const { return {dialogue_id, turn_index}; }
  bool operator==(const Utterance&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;  // sorted, turn_index == position

  std::size_t size() const noexcept { return utterances.size(); }
  bool operator==(const Dialogue&) const = default;
};

using Corpus = std::vector<Dialogue>;

/// Source field names for each corpus field. The defaults are the native format;
/// other exports (e.g. a release that calls the label "label") are adapted by renaming.
struct CorpusFieldMap {
  std::string dialogue_id = "dialogue_id";
  std::string turn_index = "turn_index";
  std::string speaker = "speaker";
  std::string text = "text";
  std::string intent = "intent";

  /// Parses "intent=label,text=utterance" style overrides.
  static CorpusFieldMap parse(std::string_view spec) {
    CorpusFieldMap map;
    std::size_t pos = 0;
    while (pos < spec.size()) {
      auto comma = spec.find(',', pos);
      auto item = spec.substr(pos, comma == std::string_view::npos ? spec.npos : comma - pos);
      auto eq = item.find('=');
      if (eq == std::string_view::npos || eq == 0 || eq + 1 == item.size()) {
        throw ValidationError("bad field mapping '" + std::string(item) + "', want field=source");
      }
      auto field = item.substr(0, eq);
      std::string source(item.substr(eq + 1));
      if (field == "dialogue_id") map.dialogue_id = source;
      else if (field == "turn_index") map.turn_index = source;
      else if (field == "speaker") map.speaker = source;
      else if (field == "text") map.text = source;
      else if (field == "intent") map.intent = source;
      else throw ValidationError("unknown corpus field '" + std::string(field) + "'");
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    return map;
  }
};

namespace detail {

inline std::string require_string(const json& record, const std::string& field,
                                  const std::string& where) {
  auto it = record.find(field);
  if (it == record.end() || !it->is_string()) {
    throw ValidationError(where + ": missing string field '" + field + "'");
  }
  return it->get<std::string>();
}

inline std::int64_t require_index(const json& record, const std::string& field,
                                  const std::string& where) {
  auto it = record.find(field);
  if (it == record.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0) {
    throw ValidationError(where + ": field '" + field + "' must be a nonnegative integer");
  }
  return it->get<std::int64_t>();
}

}  // namespace detail

/// Loads a line-delimited corpus. Dialogues keep their order of first appearance;
/// utterances inside a dialogue are sorted by turn_index, which must run 0..n-1.
inline Corpus load_corpus(const std::filesystem::path& path, const LabelSpace& labels,
                          const CorpusFieldMap& fields = {}) {
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> dialogue_pos;
  std::map<UtteranceKey, std::size_t> seen;  // key -> line

  io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto record = io::parse_record(path, line_no, line);
    Utterance u;
    u.dialogue_id = detail::require_string(record, fields.dialogue_id, where);
    u.turn_index = detail::require_index(record, fields.turn_index, where);
    u.speaker = detail::require_string(record, fields.speaker, where);
    u.text = detail::require_string(record, fields.text, where);
    u.gold_intent = detail::require_string(record, fields.intent, where);
    if (u.text.empty()) {
      throw ValidationError(where + ": empty text");
    }
    if (!labels.contains(u.gold_intent)) {
      throw ValidationError(where + ": unknown intent label '" + u.gold_intent + "'");
    }
    auto [it, inserted] = seen.emplace(u.key(), line_no);
    if (!inserted) {
      throw ValidationError(where + ": duplicate utterance " + u.key().str() +
                            " (first seen on line " + std::to_string(it->second) + ")");
    }
    auto [pos, fresh] = dialogue_pos.emplace(u.dialogue_id, corpus.size());
    if (fresh) {
      corpus.push_back(Dialogue{u.dialogue_id, {}});
    }
    corpus[pos->second].utterances.push_back(std::move(u));
  });

  for (auto& dialogue : corpus) {
    std::sort(dialogue.utterances.begin(), dialogue.utterances.end(),
              [](const Utterance& a, const Utterance& b) { return a.turn_index < b.turn_index; });
    for (std::size_t i = 0; i < dialogue.utterances.size(); ++i) {
      if (dialogue.utterances[i].turn_index != static_cast<std::int64_t>(i)) {
        throw ValidationError("dialogue '" + dialogue.id + "': turn indices are not contiguous from 0 (missing turn " +
                              std::to_string(i) + ")");
      }
    }
  }
  return corpus;
}

inline std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& dialogue : corpus) {
    for (const auto& u : dialogue.utterances) {
      ordered_json record;
      record["dialogue_id"] = u.dialogue_id;
      record["turn_index"] = u.turn_index;
      record["speaker"] = u.speaker;
      record["text"] = u.text;
      record["intent"] = u.gold_intent;
      out += record.dump();
      out += '\n';
    }
  }
  return out;
}

inline std::size_t utterance_count(const Corpus& corpus) {
  std::size_t n = 0;
  for (const auto& d : corpus) n += d.size();
  return n;
}

/// A target utterance and up to H immediately preceding turns, oldest first.
struct ContextWindow {
  Utterance target;
  std::vector<Utterance> history;
};

inline ContextWindow build_context(const Dialogue& dialogue, std::int64_t turn_index,
                                   std::size_t h = kDefaultHistory) {
  if (turn_index < 0 || static_cast<std::size_t>(turn_index) >= dialogue.size()) {
    throw ValidationError("dialogue '" + dialogue.id + "': turn " + std::to_string(turn_index) +
                          " out of range [0, " + std::to_string(dialogue.size()) + ")");
  }
  const auto i = static_cast<std::size_t>(turn_index);
  const auto begin = i > h ? i - h : 0;
  ContextWindow window{dialogue.utterances[i], {}};
  window.history.assign(dialogue.utterances.begin() + static_cast<std::ptrdiff_t>(begin),
                        dialogue.utterances.begin() + static_cast<std::ptrdiff_t>(i));
  return window;
}

/// Classifier input: history texts and the target joined by " <ts> ". Speakers are not included.
inline std::string render_classifier_input(const ContextWindow& window,
                                           std::string_view ts_token = kTurnShiftToken) {
  if (ts_token.empty()) {
    throw ValidationError("turn-shift token must be non-empty");
  }
  std::string out;
  for (const auto& u : window.history) {
    out += u.text;
    out += ' ';
    out += ts_token;
    out += ' ';
  }
  out += window.target.text;
  return out;
}

}  // namespace cascade
