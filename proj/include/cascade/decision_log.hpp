#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/error.hpp"
#include "cascade/io.hpp"
#include "cascade/label_space.hpp"
#include "cascade/router.hpp"

namespace cascade {

namespace detail {

template <class T>
ordered_json optional_json(const std::optional<T>& value) {
  return value ? ordered_json(*value) : ordered_json(nullptr);
}

}  // namespace detail

/// One JSON object per decision, in corpus order. Field order is fixed so that identical
/// runs produce identical bytes.
inline std::string serialize_decisions(const std::vector<RoutingDecision>& decisions) {
  std::string out;
  for (const auto& d : decisions) {
    ordered_json line;
    line["dialogue_id"] = d.key.dialogue_id;
    line["turn_index"] = d.key.turn_index;
    line["method"] = std::string(method_name(d.method));
    line["vote_label"] = detail::optional_json(d.vote_label);
    line["uncertainty"] = detail::optional_json(d.uncertainty);
    line["routed"] = d.routed;
    if (d.offered_labels) {
      ordered_json offered;
      offered["labels"] = d.offered_labels->labels;
      offered["mass"] = d.offered_labels->mass;
      offered["p"] = d.offered_labels->p_threshold;
      line["offered_labels"] = std::move(offered);
    } else {
      line["offered_labels"] = nullptr;
    }
    line["final_label"] = d.final_label;
    line["llm_parse_ok"] = detail::optional_json(d.llm_parse_ok);
    line["llm_reply"] = detail::optional_json(d.llm_reply);
    line["error"] = detail::optional_json(d.error);
    line["classifier_seconds"] = d.classifier_seconds;
    line["llm_seconds"] = d.llm_seconds;
    out += line.dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

inline std::vector<RoutingDecision> load_decisions(const std::filesystem::path& path, const LabelSpace& labels) {
  std::vector<RoutingDecision> out;
  io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto record = io::parse_record(path, line_no, line);
    try {
      RoutingDecision d;
      d.key = {record.at("dialogue_id").get<std::string>(), record.at("turn_index").get<std::int64_t>()};
      d.method = parse_method(record.at("method").get<std::string>());
      if (!record.at("vote_label").is_null()) d.vote_label = record["vote_label"].get<std::string>();
      if (!record.at("uncertainty").is_null()) d.uncertainty = record["uncertainty"].get<double>();
      d.routed = record.at("routed").get<bool>();
      if (const auto& offered = record.at("offered_labels"); !offered.is_null()) {
        ReducedLabelSet set;
        set.labels = offered.at("labels").get<std::vector<std::string>>();
        for (const auto& label : set.labels) {
          auto idx = labels.index_of(label);
          if (!idx) throw ValidationError(where + ": offered label '" + label + "' not in label space");
          set.indices.push_back(*idx);
        }
        set.mass = offered.at("mass").get<double>();
        set.p_threshold = offered.at("p").get<double>();
        d.offered_labels = std::move(set);
      }
      d.final_label = record.at("final_label").get<std::string>();
      if (!labels.contains(d.final_label)) {
        throw ValidationError(where + ": final label '" + d.final_label + "' not in label space");
      }
      if (!record.at("llm_parse_ok").is_null()) d.llm_parse_ok = record["llm_parse_ok"].get<bool>();
      if (!record.at("llm_reply").is_null()) d.llm_reply = record["llm_reply"].get<std::string>();
      if (!record.at("error").is_null()) d.error = record["error"].get<std::string>();
      d.classifier_seconds = record.at("classifier_seconds").get<double>();
      d.llm_seconds = record.at("llm_seconds").get<double>();
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw ValidationError(where + ": malformed decision record (" + e.what() + ")");
    }
  });
  return out;
}

}  // namespace cascade
