#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cascade/error.hpp"

namespace cascade {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace io {

/// Calls fn(line_number, line) for every non-blank line of a UTF-8 text file.
/// Line numbers are 1-based. A trailing '\r' is stripped.
inline void for_each_line(const std::filesystem::path& path,
                          const std::function<void(std::size_t, std::string_view)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open " + path.string());
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.find_first_not_of(" \t") == std::string::npos) {
      continue;
    }
    fn(line_no, line);
  }
}

/// Parses one JSONL record; throws ValidationError naming the file and line.
inline json parse_record(const std::filesystem::path& path, std::size_t line_no,
                         std::string_view line) {
  json record = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (record.is_discarded() || !record.is_object()) {
    throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                          ": not a JSON object");
  }
  return record;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Writes the whole content to a sibling temporary file, then renames it into place,
/// so readers never observe a half-written output.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw ValidationError("cannot write " + tmp.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      throw ValidationError("short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ValidationError("cannot rename into " + path.string());
  }
}

/// 64-bit FNV-1a. Stable across platforms, used for seeds and config hashes.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex64(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << value;
  return out.str();
}

}  // namespace io
}  // namespace cascade
