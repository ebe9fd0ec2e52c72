#include "boat/csv.hpp"

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>

#include "boat/types.hpp"

namespace boat {

namespace {

void strip_line_end(std::string& line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

void CsvReader::expect_header(std::string_view header) {
  std::string line;
  if (!std::getline(in_, line)) throw ParseError("missing header, expected '" + std::string(header) + "'", 1);
  row_ = 1;
  strip_line_end(line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != header) throw ParseError("unexpected header '" + line + "', expected '" + std::string(header) + "'", 1);
}

std::optional<std::vector<std::string>> CsvReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++row_;
    strip_line_end(line);
    if (trim(line).empty()) continue;
    return split(line);
  }
  return std::nullopt;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view text, std::size_t row, std::string_view column) {
  text = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v))
    throw ParseError("invalid number '" + std::string(text) + "' in column " + std::string(column), row);
  return v;
}

int parse_int(std::string_view text, std::size_t row, std::string_view column) {
  text = trim(text);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
    throw ParseError("invalid integer '" + std::string(text) + "' in column " + std::string(column), row);
  return v;
}

std::optional<double> parse_optional_double(std::string_view text, std::size_t row, std::string_view column) {
  if (trim(text).empty()) return std::nullopt;
  return parse_double(text, row, column);
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  if (v == 0.0) return "0";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

ContentHash& ContentHash::add(std::string_view bytes) {
  for (unsigned char c : bytes) {
    state_ ^= c;
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

ContentHash& ContentHash::add(double v) {
  if (v == 0.0) v = 0.0;  // -0 and +0 serialize identically
  char buf[sizeof(double)];
  std::memcpy(buf, &v, sizeof(double));
  return add(std::string_view(buf, sizeof(buf)));
}

ContentHash& ContentHash::add(std::int64_t v) {
  char buf[sizeof(v)];
  std::memcpy(buf, &v, sizeof(v));
  return add(std::string_view(buf, sizeof(buf)));
}

std::string ContentHash::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ContentHash().add(bytes).hex();
}

}  // namespace boat
