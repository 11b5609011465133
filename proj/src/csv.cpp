#include "uwml/csv.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace uwml {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string format_double(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::optional<double> parse_double(std::string_view s) noexcept {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

CsvReader::CsvReader(const std::filesystem::path& path,
                     const std::vector<std::string>& required_columns, char sep)
    : in_(path), sep_(sep) {
  if (!in_) throw std::runtime_error("cannot open " + path.string());
  std::string header_line;
  if (!std::getline(in_, header_line)) throw std::runtime_error(path.string() + ": missing header");
  for (auto f : split(trim(header_line), sep_)) header_.emplace_back(trim(f));
  for (std::size_t i = 0; i < header_.size(); ++i) index_.emplace(header_[i], i);
  for (const auto& col : required_columns) {
    if (!index_.contains(col)) {
      throw std::runtime_error(path.string() + ": missing required column '" + col + "'");
    }
  }
}

bool CsvReader::next() {
  while (std::getline(in_, line_)) {
    ++line_no_;
    if (trim(line_).empty()) continue;
    std::string_view view = line_;
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    fields_ = split(view, sep_);
    return true;
  }
  return false;
}

std::string_view CsvReader::operator[](std::string_view column) const {
  auto it = index_.find(std::string(column));
  if (it == index_.end() || it->second >= fields_.size()) return {};
  return trim(fields_[it->second]);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
                     char sep)
    : out_(path, std::ios::binary | std::ios::trunc), sep_(sep) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_.put(sep_);
    out_ << fields[i];
  }
  out_.put('\n');
}

}  // namespace uwml
