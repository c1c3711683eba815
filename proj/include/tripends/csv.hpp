#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tripends::csv {

/// Splits one line on commas. No quoting: none of the formats here need it.
std::vector<std::string_view> split(std::string_view line);

/// Strips a trailing '\r' so CRLF files read like LF files.
std::string_view chomp(std::string_view line);

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

/// Reads a whole text file; throws InputError if it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes a whole file atomically enough for our purposes (truncate + write).
void write_file(const std::filesystem::path& path, std::string_view content);

/// Calls fn(line_number, fields) for every non-empty line after a header that
/// must equal `expected_header` exactly. Throws InputError on header mismatch.
template <typename Fn>
void for_each_row(const std::string& text, std::string_view expected_header,
                  const std::filesystem::path& source, Fn&& fn);

}  // namespace tripends::csv

#include "tripends/error.hpp"

namespace tripends::csv {

template <typename Fn>
void for_each_row(const std::string& text, std::string_view expected_header,
                  const std::filesystem::path& source, Fn&& fn) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line = chomp(std::string_view(text).substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (!header_seen) {
      if (line != expected_header) {
        throw InputError(source.string() + ": expected header '" +
                         std::string(expected_header) + "', got '" + std::string(line) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    fn(line_no, split(line));
  }
  if (!header_seen) {
    throw InputError(source.string() + ": missing header '" + std::string(expected_header) + "'");
  }
}

}  // namespace tripends::csv
