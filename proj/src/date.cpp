#include "uwml/date.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace uwml {

using namespace std::chrono;

Date::Date(int y, unsigned m, unsigned d) {
  const year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw std::invalid_argument("invalid calendar date");
  days_ = sys_days{ymd};
}

std::optional<Date> Date::try_parse(std::string_view iso) noexcept {
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse_part = [&](std::string_view part, auto& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    return ec == std::errc{} && ptr == part.data() + part.size();
  };
  if (!parse_part(iso.substr(0, 4), y) || !parse_part(iso.substr(5, 2), m) ||
      !parse_part(iso.substr(8, 2), d)) {
    return std::nullopt;
  }
  const year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{sys_days{ymd}};
}

Date Date::parse(std::string_view iso) {
  if (auto d = try_parse(iso)) return *d;
  throw std::invalid_argument("malformed date '" + std::string(iso) + "'");
}

std::string Date::iso() const {
  const auto ymd = this->ymd();
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Date Date::add_months(int n) const {
  const auto ymd = this->ymd();
  const year_month ym = year_month{ymd.year(), ymd.month()} + months{n};
  const year_month_day_last last{ym.year(), month_day_last{ym.month()}};
  const std::chrono::day d = ymd.day() > last.day() ? last.day() : ymd.day();
  return Date{sys_days{year_month_day{ym.year(), ym.month(), d}}};
}

Date Date::first_of_month() const {
  const auto ymd = this->ymd();
  return Date{sys_days{year_month_day{ymd.year(), ymd.month(), std::chrono::day{1}}}};
}

int count_month_starts(const DateRange& range) {
  if (range.last < range.first) return 0;
  Date m = range.first.first_of_month();
  if (m < range.first) m = m.add_months(1);
  int n = 0;
  for (; m <= range.last; m = m.add_months(1)) ++n;
  return n;
}

}  // namespace uwml
