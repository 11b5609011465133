#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace uwml {

/// USD amount held as integer cents so that claim bookkeeping is exact.
struct Money {
  std::int64_t cents = 0;

  static Money from_dollars(double dollars) {
    return Money{static_cast<std::int64_t>(std::llround(dollars * 100.0))};
  }
  /// Accepts an optional sign and up to two fraction digits ("-3000", "12.5", "0.07").
  static std::optional<Money> parse(std::string_view text) noexcept;

  double dollars() const { return static_cast<double>(cents) / 100.0; }
  /// Always two fraction digits.
  std::string str() const;

  Money operator-() const { return Money{-cents}; }
  Money& operator+=(Money o) {
    cents += o.cents;
    return *this;
  }
  Money& operator-=(Money o) {
    cents -= o.cents;
    return *this;
  }
  friend Money operator+(Money a, Money b) { return Money{a.cents + b.cents}; }
  friend Money operator-(Money a, Money b) { return Money{a.cents - b.cents}; }
  auto operator<=>(const Money&) const = default;
};

}  // namespace uwml
