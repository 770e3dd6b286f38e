#ifndef PANELSYNTH_CALENDAR_HPP
#define PANELSYNTH_CALENDAR_HPP

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "panelsynth/common.hpp"

namespace panelsynth {

/// Calendar date as a serial day count (days since 1970-01-01).
/// Day arithmetic is plain integer arithmetic; conversions follow the
/// proleptic Gregorian calendar.
struct Date {
    std::int32_t serial = 0;

    auto operator<=>(const Date&) const = default;

    Date plus_days(int n) const { return Date{serial + n}; }
    int days_until(Date other) const { return other.serial - serial; }
};

struct CivilDate {
    int year = 1970;
    int month = 1; // 1..12
    int day = 1;   // 1..31
};

namespace cal {

inline bool is_leap(int y) {
    return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

inline int days_in_month(int y, int m) {
    static const int lens[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return lens[m - 1];
}

inline bool valid_civil(int y, int m, int d) {
    return m >= 1 && m <= 12 && d >= 1 && d <= days_in_month(y, m);
}

// Days-from-civil / civil-from-days after Howard Hinnant's algorithms.
inline std::int32_t serial_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int32_t>(era * 146097 + static_cast<int>(doe) - 719468);
}

inline CivilDate civil_from_serial(std::int32_t z) {
    z += 719468;
    const int era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int y = static_cast<int>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return CivilDate{y + (m <= 2), static_cast<int>(m), static_cast<int>(d)};
}

} // namespace cal

inline Date make_date(int y, int m, int d) {
    if (!cal::valid_civil(y, m, d))
        throw Error("invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" +
                    std::to_string(d));
    return Date{cal::serial_from_civil(y, m, d)};
}

inline CivilDate to_civil(Date d) { return cal::civil_from_serial(d.serial); }

/// 0 = Sunday .. 6 = Saturday.
inline int weekday(Date d) {
    int w = (d.serial + 4) % 7; // 1970-01-01 was a Thursday
    return w < 0 ? w + 7 : w;
}

inline std::string to_iso(Date d) {
    CivilDate c = to_civil(d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", c.year, c.month, c.day);
    return buf;
}

enum class DateFormat { Iso, MonthDayYear };

/// Parses "YYYY-MM-DD" or "MM/DD/YYYY" depending on fmt. A trailing time-of-day
/// portion after a space or 'T' is ignored (incident feeds often carry one).
inline Date parse_date(std::string_view text, DateFormat fmt) {
    std::string t = detail::trim(text);
    if (auto cut = t.find_first_of(" T"); cut != std::string::npos) t = t.substr(0, cut);
    int y = 0, m = 0, d = 0;
    if (fmt == DateFormat::Iso) {
        if (std::sscanf(t.c_str(), "%d-%d-%d", &y, &m, &d) != 3)
            throw Error("cannot parse ISO date '" + t + "'");
    } else {
        if (std::sscanf(t.c_str(), "%d/%d/%d", &m, &d, &y) != 3)
            throw Error("cannot parse MM/DD/YYYY date '" + t + "'");
    }
    return make_date(y, m, d);
}

inline Date parse_iso_date(std::string_view text) { return parse_date(text, DateFormat::Iso); }

namespace cal {

inline Date nth_weekday_of_month(int year, int month, int wday, int n) {
    Date first = make_date(year, month, 1);
    int offset = (wday - weekday(first) + 7) % 7;
    return first.plus_days(offset + 7 * (n - 1));
}

inline Date last_weekday_of_month(int year, int month, int wday) {
    Date last = make_date(year, month, days_in_month(year, month));
    int offset = (weekday(last) - wday + 7) % 7;
    return last.plus_days(-offset);
}

} // namespace cal

/// US federal holidays (pre-2021 list) plus Halloween for a given year.
/// New Year's Day is part of the federal list. Actual dates, not observed ones.
inline std::vector<Date> us_holidays(int year) {
    using namespace cal;
    std::vector<Date> out;
    out.push_back(make_date(year, 1, 1));                  // New Year's Day
    out.push_back(nth_weekday_of_month(year, 1, 1, 3));    // MLK Day
    out.push_back(nth_weekday_of_month(year, 2, 1, 3));    // Washington's Birthday
    out.push_back(last_weekday_of_month(year, 5, 1));      // Memorial Day
    out.push_back(make_date(year, 7, 4));                  // Independence Day
    out.push_back(nth_weekday_of_month(year, 9, 1, 1));    // Labor Day
    out.push_back(nth_weekday_of_month(year, 10, 1, 2));   // Columbus Day
    out.push_back(make_date(year, 11, 11));                // Veterans Day
    out.push_back(nth_weekday_of_month(year, 11, 4, 4));   // Thanksgiving
    out.push_back(make_date(year, 12, 25));                // Christmas
    out.push_back(make_date(year, 10, 31));                // Halloween
    return out;
}

} // namespace panelsynth

#endif
