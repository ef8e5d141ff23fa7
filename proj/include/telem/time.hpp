#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace telem {

/// Seconds since the Unix epoch, UTC. Second resolution throughout.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerDay = 86400;

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
std::int64_t days_from_civil(int year, unsigned month, unsigned day);

/// Inverse of days_from_civil.
void civil_from_days(std::int64_t days, int& year, unsigned& month, unsigned& day);

/// Parses "MM/DD/YYYY HH:MM:SS". Returns nullopt on malformed input.
std::optional<Timestamp> parse_timestamp(std::string_view text);

/// Parses "MM/DD/YYYY" as midnight UTC.
std::optional<Timestamp> parse_date(std::string_view text);

/// Formats as "MM/DD/YYYY HH:MM:SS".
std::string format_timestamp(Timestamp ts);

/// Formats as "MM/DD/YYYY".
std::string format_date(Timestamp ts);

/// Seconds past midnight, in [0, 86400).
inline int seconds_of_day(Timestamp ts) {
    std::int64_t s = ts % kSecondsPerDay;
    if (s < 0) s += kSecondsPerDay;
    return static_cast<int>(s);
}

} // namespace telem
