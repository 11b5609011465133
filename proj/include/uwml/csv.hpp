#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace uwml {

/// Splits on `sep` without quoting rules; every file this project reads or
/// writes is plain delimiter-separated text with no embedded separators.
std::vector<std::string_view> split(std::string_view line, char sep);

std::string_view trim(std::string_view s);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view s) noexcept;

/// Header-driven reader. Missing required columns throw std::runtime_error
/// at construction; rows are returned as views valid until the next call.
class CsvReader {
 public:
  CsvReader(const std::filesystem::path& path, const std::vector<std::string>& required_columns,
            char sep = ',');

  /// Returns false at end of file.
  bool next();
  /// 1-based physical line number of the current row (header is line 1).
  std::size_t line_no() const { return line_no_; }
  std::size_t field_count() const { return fields_.size(); }
  bool well_formed() const { return fields_.size() == header_.size(); }
  std::string_view operator[](std::string_view column) const;
  const std::vector<std::string>& header() const { return header_; }

 private:
  std::ifstream in_;
  char sep_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string line_;
  std::vector<std::string_view> fields_;
  std::size_t line_no_ = 1;
};

/// Writes rows joined by `sep`. Throws std::runtime_error if the file cannot be opened.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
            char sep = ',');
  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
  char sep_;
};

}  // namespace uwml
