#include "clem/date.hpp"

#include <array>
#include <cstdio>

namespace clem {

namespace {

bool is_leap(std::int32_t y) {
    return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

int days_in_month(std::int32_t y, unsigned m) {
    static constexpr std::array<int, 12> k = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return k[m - 1];
}

} // namespace

bool is_valid_date(const Date& d) {
    return d.month >= 1 && d.month <= 12 && d.day >= 1 &&
           static_cast<int>(d.day) <= days_in_month(d.year, d.month);
}

// Low-level civil-from-days / days-from-civil conversions (era arithmetic).
std::int64_t days_from_civil(const Date& d) {
    std::int64_t y = d.year;
    const std::int64_t m = d.month;
    const std::int64_t dd = d.day;
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const std::int64_t yoe = y - era * 400;
    const std::int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + dd - 1;
    const std::int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

Date civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const std::int64_t doe = z - era * 146097;
    const std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = yoe + era * 400;
    const std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const std::int64_t mp = (5 * doy + 2) / 153;
    const std::int64_t dd = doy - (153 * mp + 2) / 5 + 1;
    const std::int64_t m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<std::int32_t>(y + (m <= 2)), static_cast<std::uint8_t>(m),
                static_cast<std::uint8_t>(dd)};
}

Date add_days(const Date& d, std::int64_t n) {
    return civil_from_days(days_from_civil(d) + n);
}

Date add_years(const Date& d, int n) {
    Date r = d;
    r.year += n;
    if (r.month == 2 && r.day == 29 && !is_leap(r.year)) r.day = 28;
    return r;
}

std::optional<Date> parse_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto digits = [&](int a, int b) -> std::optional<int> {
        int v = 0;
        for (int i = a; i < b; ++i) {
            if (s[i] < '0' || s[i] > '9') return std::nullopt;
            v = v * 10 + (s[i] - '0');
        }
        return v;
    };
    auto y = digits(0, 4);
    auto m = digits(5, 7);
    auto dd = digits(8, 10);
    if (!y || !m || !dd) return std::nullopt;
    Date d{*y, static_cast<std::uint8_t>(*m), static_cast<std::uint8_t>(*dd)};
    if (!is_valid_date(d)) return std::nullopt;
    return d;
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", d.year, unsigned(d.month), unsigned(d.day));
    return buf;
}

} // namespace clem
