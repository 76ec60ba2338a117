#pragma once

#include <cstddef>
#include <string>

namespace cascade {

/// One completed LLM call. `latency_seconds` covers the final successful attempt only.
struct TimedResponse {
  std::string raw_text;
  double latency_seconds = 0.0;
  std::size_t attempt_count = 1;
};

/// Anything that can answer a rendered prompt: a real endpoint or the deterministic stub.
/// Implementations must be safe to call from several threads at once.
class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual TimedResponse complete(const std::string& prompt) = 0;
  /// Short identity for run manifests.
  virtual std::string describe() const = 0;
};

}  // namespace cascade
