#pragma once

// Small helpers shared by the file formats: a comma-separated reader that
// tracks row numbers, strict number parsing, lossless number formatting and a
// stable content hash for provenance stamps.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace boat {

class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  /// Reads the first row and throws ParseError unless it equals `header`.
  void expect_header(std::string_view header);

  /// Next non-empty data row split on commas, or nullopt at end of input.
  std::optional<std::vector<std::string>> next();

  /// 1-based row number of the row last returned (header is row 1).
  std::size_t row() const { return row_; }

 private:
  std::istream& in_;
  std::size_t row_ = 0;
};

std::vector<std::string> split(std::string_view line, char sep = ',');

double parse_double(std::string_view text, std::size_t row, std::string_view column);
int parse_int(std::string_view text, std::size_t row, std::string_view column);
std::optional<double> parse_optional_double(std::string_view text, std::size_t row, std::string_view column);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// 64-bit FNV-1a, rendered as 16 hex digits.
class ContentHash {
 public:
  ContentHash& add(std::string_view bytes);
  ContentHash& add(double v);
  ContentHash& add(std::int64_t v);
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_file(const std::string& path);

}  // namespace boat
