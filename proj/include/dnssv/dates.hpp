#ifndef DNSSV_DATES_HPP
#define DNSSV_DATES_HPP

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace dnssv {

// Days since 1970-01-01 from a proleptic Gregorian civil date.
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

// 0 = Monday ... 6 = Sunday.
inline int weekday_from_days(std::int64_t z) {
  return static_cast<int>(z >= -3 ? (z + 3) % 7 : (z + 4) % 7 + 6);
}

// A calendar date stored as a serial day number.  Parses either ISO
// "YYYY-MM-DD" or a plain integer; remembers which form it came from so
// round trips through text files are exact.
struct Date {
  std::int64_t serial = 0;
  bool iso = false;

  Date() = default;
  explicit Date(std::int64_t s, bool is_iso = false) : serial(s), iso(is_iso) {}

  static Date from_civil(int y, int m, int d) {
    return Date(days_from_civil(y, m, d), true);
  }

  static Date parse(const std::string& text) {
    int y, m, d;
    if (std::sscanf(text.c_str(), "%d-%d-%d", &y, &m, &d) == 3) {
      if (m < 1 || m > 12 || d < 1 || d > 31)
        throw std::invalid_argument("Date::parse: bad calendar date '" + text + "'");
      return from_civil(y, m, d);
    }
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(text, &pos);
      if (pos != text.size()) throw std::invalid_argument("");
      return Date(v, false);
    } catch (...) {
      throw std::invalid_argument("Date::parse: unrecognized date '" + text + "'");
    }
  }

  int year() const {
    int y, m, d;
    civil_from_days(serial, y, m, d);
    return y;
  }
  int month() const {
    int y, m, d;
    civil_from_days(serial, y, m, d);
    return m;
  }
  bool is_weekday() const {
    return weekday_from_days(serial) < 5;
  }

  std::string str() const {
    if (!iso) return std::to_string(serial);
    int y, m, d;
    civil_from_days(serial, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
  }

  bool operator<(const Date& o) const { return serial < o.serial; }
  bool operator==(const Date& o) const { return serial == o.serial; }
};

}  // namespace dnssv

#endif
