#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/io.hpp"

namespace cascade {

inline constexpr std::string_view kDefaultOosToken = "UNK";

/// The m in-scope intents plus the reserved out-of-scope token.
///
/// Labels are non-empty, unique, and free of commas and line breaks: the prompt
/// lists them comma-separated on a single line.
class LabelSpace {
 public:
  LabelSpace(std::vector<std::string> in_scope, std::string oos_token = std::string(kDefaultOosToken))
      : in_scope_(std::move(in_scope)), oos_token_(std::move(oos_token)) {
    if (in_scope_.empty()) {
      throw ValidationError("label space needs at least one in-scope label");
    }
    check_label(oos_token_);
    for (std::size_t i = 0; i < in_scope_.size(); ++i) {
      check_label(in_scope_[i]);
      if (in_scope_[i] == oos_token_) {
        throw ValidationError("in-scope label collides with the OOS token '" + oos_token_ + "'");
      }
      if (!index_.emplace(in_scope_[i], i).second) {
        throw ValidationError("duplicate label '" + in_scope_[i] + "'");
      }
    }
  }

  /// One label per line; blank lines and lines starting with '#' are ignored.
  static LabelSpace load(const std::filesystem::path& path,
                         std::string oos_token = std::string(kDefaultOosToken)) {
    std::vector<std::string> labels;
    io::for_each_line(path, [&](std::size_t, std::string_view line) {
      auto first = line.find_first_not_of(" \t");
      auto last = line.find_last_not_of(" \t");
      auto trimmed = line.substr(first, last - first + 1);
      if (trimmed.front() != '#') {
        labels.emplace_back(trimmed);
      }
    });
    return LabelSpace(std::move(labels), std::move(oos_token));
  }

  std::string to_file_text() const {
    std::string out;
    for (const auto& label : in_scope_) {
      out += label;
      out += '\n';
    }
    return out;
  }

  const std::vector<std::string>& in_scope() const noexcept { return in_scope_; }
  const std::string& oos_token() const noexcept { return oos_token_; }
  std::size_t m() const noexcept { return in_scope_.size(); }

  /// Y_A ordering: in-scope labels first, the OOS token last (index m).
  std::vector<std::string> all() const {
    auto out = in_scope_;
    out.push_back(oos_token_);
    return out;
  }

  std::optional<std::size_t> index_of(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  bool is_in_scope(std::string_view label) const { return index_of(label).has_value(); }
  bool is_oos(std::string_view label) const { return label == oos_token_; }
  bool contains(std::string_view label) const { return is_in_scope(label) || is_oos(label); }

  /// Index into all(): in-scope index, or m for the OOS token.
  std::optional<std::size_t> full_index_of(std::string_view label) const {
    if (is_oos(label)) {
      return m();
    }
    return index_of(label);
  }

 private:
  static void check_label(const std::string& label) {
    if (label.empty()) {
      throw ValidationError("empty label");
    }
    if (label.find_first_of(",\r\n") != std::string::npos) {
      throw ValidationError("label '" + label + "' contains a comma or line break");
    }
  }

  std::vector<std::string> in_scope_;
  std::string oos_token_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cascade
