#pragma once

#include <chrono>
#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace uwml {

/// Calendar date with day resolution. Stored as days since the Unix epoch.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(std::chrono::sys_days days) : days_(days) {}
  Date(int year, unsigned month, unsigned day);

  /// Parses "YYYY-MM-DD". Throws std::invalid_argument on malformed input.
  static Date parse(std::string_view iso);
  static std::optional<Date> try_parse(std::string_view iso) noexcept;

  std::string iso() const;
  std::chrono::year_month_day ymd() const { return std::chrono::year_month_day{days_}; }
  int serial() const { return static_cast<int>(days_.time_since_epoch().count()); }

  int year() const { return static_cast<int>(ymd().year()); }
  unsigned month() const { return static_cast<unsigned>(ymd().month()); }
  unsigned day() const { return static_cast<unsigned>(ymd().day()); }

  Date add_days(int n) const { return Date{days_ + std::chrono::days{n}}; }
  /// Calendar month arithmetic; the day is clamped to the end of the target month.
  Date add_months(int n) const;
  Date first_of_month() const;

  auto operator<=>(const Date&) const = default;

 private:
  std::chrono::sys_days days_{};
};

/// b - a in days.
inline int days_between(Date a, Date b) { return b.serial() - a.serial(); }

/// Inclusive date range.
struct DateRange {
  Date first;
  Date last;

  bool contains(Date d) const { return first <= d && d <= last; }
  bool operator==(const DateRange&) const = default;
};

/// Number of first-of-month dates inside [range.first, range.last].
int count_month_starts(const DateRange& range);

}  // namespace uwml
