#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace clem {

/// Proleptic Gregorian calendar date. Comparisons are chronological.
struct Date {
    std::int32_t year = 1970;
    std::uint8_t month = 1; // 1..12
    std::uint8_t day = 1;   // 1..31

    auto operator<=>(const Date&) const = default;
};

bool is_valid_date(const Date& d);

/// Days since 1970-01-01 (negative before).
std::int64_t days_from_civil(const Date& d);
Date civil_from_days(std::int64_t z);

Date add_days(const Date& d, std::int64_t n);

/// Calendar-year shift; Feb 29 clamps to Feb 28 when the target year
/// is not a leap year.
Date add_years(const Date& d, int n);

/// Parses strict "YYYY-MM-DD". Returns nullopt on malformed input.
std::optional<Date> parse_date(std::string_view s);
std::string format_date(const Date& d);

} // namespace clem
