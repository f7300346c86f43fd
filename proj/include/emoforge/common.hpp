#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

namespace emoforge {

using json = nlohmann::ordered_json;

enum class ErrorCode {
  invalid_argument,
  io,
  parse,
  duplicate,
  out_of_range,
  unknown_label,
  schema_mismatch,
  overlap,
  empty_input,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::duplicate: return "duplicate";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::unknown_label: return "unknown_label";
    case ErrorCode::schema_mismatch: return "schema_mismatch";
    case ErrorCode::overlap: return "overlap";
    case ErrorCode::empty_input: return "empty_input";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised for bad values in a named record field.
class FieldError : public Error {
 public:
  FieldError(ErrorCode code, std::string field, const std::string& message)
      : Error(code, field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// ---------------------------------------------------------------------------
// String helpers

inline std::string_view trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

inline bool istarts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

// Position of the first case-insensitive occurrence of needle at or after from.
inline std::size_t ifind(std::string_view haystack, std::string_view needle, std::size_t from = 0) {
  if (needle.empty()) return from <= haystack.size() ? from : std::string_view::npos;
  if (haystack.size() < needle.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    if (iequals(haystack.substr(i, needle.size()), needle)) return i;
  }
  return std::string_view::npos;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Shortest decimal form that round-trips ("0.8", not "0.800000").
inline std::string format_number(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) return std::to_string(value);
  return std::string(buf.data(), ptr);
}

inline std::string format_fixed(double value, int precision) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value,
                                 std::chars_format::fixed, precision);
  if (ec != std::errc{}) return std::to_string(value);
  return std::string(buf.data(), ptr);
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
#if defined(_WIN32)
  gmtime_s(&tm, &t);
#else
  gmtime_r(&t, &tm);
#endif
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf.data();
}

// ---------------------------------------------------------------------------
// Digests

inline std::array<unsigned char, 32> sha256_bytes(std::string_view data) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::io, "sha256 digest failed");
  }
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  auto bytes = sha256_bytes(data);
  std::string out;
  out.reserve(64);
  for (unsigned char b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0x0f]);
  }
  return out;
}

// First eight digest bytes, big-endian. Portable across platforms.
inline std::uint64_t sha256_u64(std::string_view data) {
  auto bytes = sha256_bytes(data);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | bytes[static_cast<std::size_t>(i)];
  return v;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file and renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, "rename to " + path.string() + " failed: " + ec.message());
}

inline void append_line(const std::filesystem::path& path, std::string_view line) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::io, "cannot append to " + path.string());
  out << line << '\n';
}

// Calls fn(line_number, json) for each non-blank line. Parse failures are
// rethrown with file and line context.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(std::size_t, const json&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json value;
    try {
      value = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::parse,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      fn(line_no, value);
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline const json& require_field(const json& obj, const char* name) {
  if (!obj.is_object()) throw Error(ErrorCode::parse, "record is not an object");
  auto it = obj.find(name);
  if (it == obj.end()) throw FieldError(ErrorCode::parse, name, "missing field");
  return *it;
}

inline std::string require_string(const json& obj, const char* name) {
  const auto& v = require_field(obj, name);
  if (!v.is_string()) throw FieldError(ErrorCode::parse, name, "expected a string");
  return v.get<std::string>();
}

}  // namespace emoforge
