#include "uwml/money.hpp"

#include <cstdio>

namespace uwml {

std::optional<Money> Money::parse(std::string_view text) noexcept {
  if (text.empty()) return std::nullopt;
  bool negative = false;
  if (text.front() == '-' || text.front() == '+') {
    negative = text.front() == '-';
    text.remove_prefix(1);
  }
  if (text.empty()) return std::nullopt;
  std::int64_t whole = 0;
  std::int64_t frac = 0;
  int frac_digits = -1;
  int whole_digits = 0;
  for (char c : text) {
    if (c == '.') {
      if (frac_digits >= 0) return std::nullopt;
      frac_digits = 0;
      continue;
    }
    if (c < '0' || c > '9') return std::nullopt;
    if (frac_digits >= 0) {
      if (++frac_digits > 2) return std::nullopt;
      frac = frac * 10 + (c - '0');
    } else {
      if (++whole_digits > 15) return std::nullopt;
      whole = whole * 10 + (c - '0');
    }
  }
  if (whole_digits == 0 && frac_digits <= 0) return std::nullopt;
  if (frac_digits == 1) frac *= 10;
  const std::int64_t cents = whole * 100 + frac;
  return Money{negative ? -cents : cents};
}

std::string Money::str() const {
  const std::int64_t a = cents < 0 ? -cents : cents;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%lld.%02lld", cents < 0 ? "-" : "",
                static_cast<long long>(a / 100), static_cast<long long>(a % 100));
  return buf;
}

}  // namespace uwml
