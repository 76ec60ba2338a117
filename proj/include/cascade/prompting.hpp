#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/io.hpp"

namespace cascade {

/// Zero-shot intent/OOS prompt. Kept byte-identical to templates/intent_prompt.txt.
///
/// Placeholders: {oos_token} (twice), {labels} (comma-separated, one line),
/// {history} (one "- " line per preceding utterance; the line disappears when there is no
/// history), {utterance}. Any other brace text is literal.
inline constexpr std::string_view kPromptTemplate =
    R"TPL(**Task description**
You are an out-of-domain intent detector, and your task is to detect whether the intent of the last utterance belongs to the intents supported by the system, from dialogues of multiple participants. If they do, return the corresponding intent label, otherwise return {oos_token}.

**Authorized categories**
The supported intents are:
{labels}

**Out-of-domain label**
- {oos_token}

**Previous utterances in the dialogue**
You have the following utterance history from multiple participants to understand the context of the dialogue. Each utterance is on a line and starts by "-":
{history}

**Expected output format**
Your response should only be a JSON object with the following structure:
{"intent": "intent_label"}
Do not write anything else.

**Task**
The utterance to classify is shown below:
{utterance}

Result:)TPL";

inline constexpr std::string_view kLabelSeparator = ", ";
inline constexpr std::string_view kHistoryBullet = "- ";

struct PromptSpec {
  std::vector<std::string> labels;  // offered in-scope labels, in prompt order
  std::string oos_token = std::string(kDefaultOosToken);
  std::vector<std::string> history_lines;
  std::string utterance;

  bool operator==(const PromptSpec&) const = default;
};

namespace detail {

enum class Slot { kOos, kLabels, kHistory, kUtterance };

struct TemplatePiece {
  std::string_view literal;  // text preceding the slot
  std::optional<Slot> slot;  // empty for the trailing literal
};

inline std::optional<Slot> slot_named(std::string_view name) {
  if (name == "oos_token") return Slot::kOos;
  if (name == "labels") return Slot::kLabels;
  if (name == "history") return Slot::kHistory;
  if (name == "utterance") return Slot::kUtterance;
  return std::nullopt;
}

inline std::vector<TemplatePiece> split_template(std::string_view tpl) {
  std::vector<TemplatePiece> pieces;
  std::size_t literal_start = 0;
  std::size_t pos = 0;
  while ((pos = tpl.find('{', pos)) != std::string_view::npos) {
    auto close = tpl.find('}', pos);
    if (close == std::string_view::npos) break;
    if (auto slot = slot_named(tpl.substr(pos + 1, close - pos - 1))) {
      pieces.push_back({tpl.substr(literal_start, pos - literal_start), slot});
      literal_start = close + 1;
      pos = close + 1;
    } else {
      ++pos;
    }
  }
  pieces.push_back({tpl.substr(literal_start), std::nullopt});
  return pieces;
}

inline std::string one_line(std::string_view text) {
  std::string out(text);
  std::replace_if(out.begin(), out.end(), [](char c) { return c == '\n' || c == '\r'; }, ' ');
  return out;
}

}  // namespace detail

/// Renders the prompt. History lines are flattened to a single line each.
inline std::string render_prompt(const PromptSpec& spec) {
  if (spec.labels.empty()) {
    throw ValidationError("prompt needs at least one offered label");
  }
  std::string out;
  const auto pieces = detail::split_template(kPromptTemplate);
  bool skip_newline = false;
  for (const auto& piece : pieces) {
    auto literal = piece.literal;
    if (skip_newline && !literal.empty() && literal.front() == '\n') {
      literal.remove_prefix(1);
    }
    skip_newline = false;
    out += literal;
    if (!piece.slot) break;
    switch (*piece.slot) {
      case detail::Slot::kOos:
        out += spec.oos_token;
        break;
      case detail::Slot::kLabels:
        for (std::size_t i = 0; i < spec.labels.size(); ++i) {
          if (i) out += kLabelSeparator;
          out += spec.labels[i];
        }
        break;
      case detail::Slot::kHistory:
        for (std::size_t i = 0; i < spec.history_lines.size(); ++i) {
          if (i) out += '\n';
          out += kHistoryBullet;
          out += detail::one_line(spec.history_lines[i]);
        }
        skip_newline = spec.history_lines.empty();
        break;
      case detail::Slot::kUtterance:
        out += spec.utterance;
        break;
    }
  }
  return out;
}

/// Inverse of render_prompt for prompts produced by this library; nullopt otherwise.
inline std::optional<PromptSpec> parse_prompt(std::string_view prompt) {
  const auto pieces = detail::split_template(kPromptTemplate);
  PromptSpec spec;
  std::optional<std::string> oos;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const auto& piece = pieces[i];
    auto literal = piece.literal;
    if (prompt.substr(pos, literal.size()) != literal) {
      // After an empty history the literal lost its leading newline.
      if (i > 0 && pieces[i - 1].slot == detail::Slot::kHistory && spec.history_lines.empty() &&
          !literal.empty() && prompt.substr(pos, literal.size() - 1) == literal.substr(1)) {
        literal.remove_prefix(1);
      } else {
        return std::nullopt;
      }
    }
    pos += literal.size();
    if (!piece.slot) {
      if (pos != prompt.size()) return std::nullopt;
      if (oos) spec.oos_token = *oos;
      return spec;
    }
    const auto next = pieces[i + 1].literal;
    std::size_t end;
    if (*piece.slot == detail::Slot::kUtterance) {
      if (next.size() > prompt.size() || prompt.substr(prompt.size() - next.size()) != next) {
        return std::nullopt;
      }
      end = prompt.size() - next.size();
    } else if (*piece.slot == detail::Slot::kHistory) {
      end = prompt.find(next.substr(1), pos);
    } else {
      end = prompt.find(next, pos);
    }
    if (end == std::string_view::npos || end < pos) return std::nullopt;
    const auto value = prompt.substr(pos, end - pos);
    switch (*piece.slot) {
      case detail::Slot::kOos:
        if (oos && *oos != value) return std::nullopt;
        oos = std::string(value);
        break;
      case detail::Slot::kLabels: {
        std::size_t start = 0;
        while (true) {
          auto sep = value.find(kLabelSeparator, start);
          spec.labels.emplace_back(value.substr(start, sep == std::string_view::npos ? sep : sep - start));
          if (sep == std::string_view::npos) break;
          start = sep + kLabelSeparator.size();
        }
        break;
      }
      case detail::Slot::kHistory: {
        // value is "" or "- a\n- b\n" minus the final newline, which belongs to the literal.
        auto body = value;
        if (!body.empty()) {
          if (body.back() != '\n') return std::nullopt;
          body.remove_suffix(1);
          std::size_t start = 0;
          while (start <= body.size()) {
            auto nl = body.find('\n', start);
            auto line = body.substr(start, nl == std::string_view::npos ? nl : nl - start);
            if (line.substr(0, kHistoryBullet.size()) != kHistoryBullet) return std::nullopt;
            spec.history_lines.emplace_back(line.substr(kHistoryBullet.size()));
            if (nl == std::string_view::npos) break;
            start = nl + 1;
          }
        }
        // Hand back the newline so the next literal matches as rendered.
        end = value.empty() ? end : end - 1;
        break;
      }
      case detail::Slot::kUtterance:
        spec.utterance = std::string(value);
        break;
    }
    pos = end;
  }
  return std::nullopt;
}

/// Prompt spec for a context window: history texts, target text, and the offered labels.
inline PromptSpec make_prompt_spec(const ContextWindow& window, std::vector<std::string> offered,
                                   std::string oos_token) {
  PromptSpec spec;
  spec.labels = std::move(offered);
  spec.oos_token = std::move(oos_token);
  for (const auto& u : window.history) {
    spec.history_lines.push_back(u.text);
  }
  spec.utterance = window.target.text;
  return spec;
}

/// What the LLM answered, after extraction. A reply naming a label that was not offered
/// is a parse failure, never silently mapped to the OOS token.
struct LlmVerdict {
  std::string raw_text;
  std::optional<std::string> parsed_label;  // empty on failure
  std::optional<std::string> reply_label;   // the "intent" value found, even if rejected
  bool parse_ok = false;
};

namespace detail {

// End (exclusive) of the balanced {...} starting at `open`, honoring JSON strings.
inline std::optional<std::size_t> match_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i + 1;
  }
  return std::nullopt;
}

}  // namespace detail

/// Extracts the intent from an LLM reply. Surrounding prose and code fences are ignored;
/// when several {"intent": ...} objects appear, the last one wins (reasoning models put
/// the answer after their deliberation). Never throws.
inline LlmVerdict parse_verdict(std::string_view raw, std::span<const std::string> offered,
                                std::string_view oos_token) noexcept {
  LlmVerdict verdict;
  try {
    verdict.raw_text = std::string(raw);
    std::size_t pos = 0;
    while ((pos = raw.find('{', pos)) != std::string_view::npos) {
      auto end = detail::match_brace(raw, pos);
      if (!end) {
        ++pos;
        continue;
      }
      auto object = json::parse(raw.substr(pos, *end - pos), nullptr, /*allow_exceptions=*/false);
      if (!object.is_discarded() && object.is_object()) {
        auto it = object.find("intent");
        if (it != object.end() && it->is_string()) {
          verdict.reply_label = it->get<std::string>();
          pos = *end;
          continue;
        }
      }
      ++pos;
    }
    if (verdict.reply_label) {
      const auto& label = *verdict.reply_label;
      if (label == oos_token || std::find(offered.begin(), offered.end(), label) != offered.end()) {
        verdict.parsed_label = label;
        verdict.parse_ok = true;
      }
    }
  } catch (...) {
    verdict.parsed_label.reset();
    verdict.parse_ok = false;
  }
  return verdict;
}

/// Canonical well-formed reply for a label, as the prompt asks for it.
inline std::string format_reply(std::string_view label) {
  json reply = json::object();
  reply["intent"] = std::string(label);
  return reply.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace cascade
