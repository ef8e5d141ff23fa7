#include "telem/time.hpp"

#include <cstdio>

namespace telem {

std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& year, unsigned& month, unsigned& day) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    day = doy - (153 * mp + 2) / 5 + 1;
    month = mp + (mp < 10 ? 3 : -9);
    year = static_cast<int>(y + (month <= 2));
}

namespace {

bool parse_uint(std::string_view s, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        char c = s[i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

std::string_view trimmed(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

} // namespace

std::optional<Timestamp> parse_date(std::string_view text) {
    std::string_view s = trimmed(text);
    int mo, dy, yr;
    if (s.size() != 10 || s[2] != '/' || s[5] != '/') return std::nullopt;
    if (!parse_uint(s, 0, 2, mo) || !parse_uint(s, 3, 2, dy) || !parse_uint(s, 6, 4, yr))
        return std::nullopt;
    if (mo < 1 || mo > 12 || dy < 1 || dy > 31) return std::nullopt;
    const std::int64_t days =
        days_from_civil(yr, static_cast<unsigned>(mo), static_cast<unsigned>(dy));
    { // reject day numbers past the end of the month (e.g. 02/30)
        int y2;
        unsigned mo2, dy2;
        civil_from_days(days, y2, mo2, dy2);
        if (y2 != yr || mo2 != static_cast<unsigned>(mo) || dy2 != static_cast<unsigned>(dy))
            return std::nullopt;
    }
    return days * kSecondsPerDay;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    std::string_view s = trimmed(text);
    if (s.size() != 19 || s[10] != ' ' || s[13] != ':' || s[16] != ':') return std::nullopt;
    auto date = parse_date(s.substr(0, 10));
    if (!date) return std::nullopt;
    int hh, mm, ss;
    if (!parse_uint(s, 11, 2, hh) || !parse_uint(s, 14, 2, mm) || !parse_uint(s, 17, 2, ss))
        return std::nullopt;
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    return *date + hh * 3600 + mm * 60 + ss;
}

std::string format_date(Timestamp ts) {
    std::int64_t days = ts / kSecondsPerDay;
    if (ts % kSecondsPerDay < 0) --days;
    int y;
    unsigned mo, dy;
    civil_from_days(days, y, mo, dy);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02u/%02u/%04d", mo, dy, y);
    return buf;
}

std::string format_timestamp(Timestamp ts) {
    int sod = seconds_of_day(ts);
    char buf[16];
    std::snprintf(buf, sizeof buf, " %02d:%02d:%02d", sod / 3600, (sod / 60) % 60, sod % 60);
    return format_date(ts) + buf;
}

} // namespace telem
