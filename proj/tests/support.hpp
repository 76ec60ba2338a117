#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cascade/corpus.hpp"
#include "cascade/ensemble.hpp"
#include "cascade/io.hpp"
#include "cascade/label_space.hpp"

namespace ct {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("cascade_test_" + std::to_string(stamp) + "_" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string source_path(const std::string& relative) {
  return std::string(CASCADE_SOURCE_DIR) + "/" + relative;
}

inline std::string corpus_line(const std::string& dialogue, std::int64_t turn, const std::string& speaker,
                               const std::string& text, const std::string& intent) {
  cascade::ordered_json j;
  j["dialogue_id"] = dialogue;
  j["turn_index"] = turn;
  j["speaker"] = speaker;
  j["text"] = text;
  j["intent"] = intent;
  return j.dump() + "\n";
}

inline std::string ensemble_line(const std::string& dialogue, std::int64_t turn, std::size_t run,
                                 const cascade::LabelSpace& labels, const std::vector<double>& probs) {
  cascade::ordered_json j;
  j["dialogue_id"] = dialogue;
  j["turn_index"] = turn;
  j["run_id"] = run;
  cascade::ordered_json p = cascade::ordered_json::object();
  for (std::size_t i = 0; i < labels.m(); ++i) p[labels.in_scope()[i]] = probs[i];
  j["probs"] = p;
  return j.dump() + "\n";
}

/// Dialogue whose utterance texts are "<id> t<n>" and golds cycle through `golds`.
inline cascade::Dialogue dialogue(const std::string& id, const std::vector<std::string>& golds) {
  cascade::Dialogue d{id, {}};
  for (std::size_t t = 0; t < golds.size(); ++t) {
    d.utterances.push_back({id, static_cast<std::int64_t>(t), t % 2 ? "staff" : "guest",
                            id + " t" + std::to_string(t), golds[t]});
  }
  return d;
}

/// Five runs that all put `top` on label `idx` and share the rest evenly.
inline cascade::EnsembleRecord flat_record(const cascade::UtteranceKey& key, std::size_t m,
                                           const std::vector<double>& vote_probs, std::size_t idx) {
  cascade::EnsembleRecord rec{key, {}};
  for (double top : vote_probs) {
    std::vector<double> v(m, (1.0 - top) / static_cast<double>(m - 1));
    v[idx] = top;
    rec.runs.push_back(std::move(v));
  }
  return rec;
}

/// Random probability vector of length m; about a third of entries are exact zeros
/// when `sparse` is set, and a few entries repeat to exercise ties.
inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t m, bool sparse = false) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(m);
  double sum = 0.0;
  for (auto& x : v) {
    x = (sparse && u(rng) < 0.33) ? 0.0 : u(rng);
    if (u(rng) < 0.1) x = 0.25;  // ties
    sum += x;
  }
  if (sum == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= sum;
  return v;
}

}  // namespace ct
