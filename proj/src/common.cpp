#include "cliffm/common.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace cliffm {
namespace {

bool read_int(std::string_view text, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > text.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    char c = text[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

[[noreturn]] void bad_timestamp(std::string_view text) {
  throw ParseError("unparseable timestamp '" + std::string(text) + "'");
}

}  // namespace

TimeMs parse_iso8601(std::string_view text) {
  int y, mo, d, h, mi, s;
  if (text.size() < 19 || text[4] != '-' || text[7] != '-' ||
      (text[10] != 'T' && text[10] != ' ') || text[13] != ':' ||
      text[16] != ':')
    bad_timestamp(text);
  if (!read_int(text, 0, 4, y) || !read_int(text, 5, 2, mo) ||
      !read_int(text, 8, 2, d) || !read_int(text, 11, 2, h) ||
      !read_int(text, 14, 2, mi) || !read_int(text, 17, 2, s))
    bad_timestamp(text);
  std::size_t pos = 19;
  int ms = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 3) ms = ms * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) bad_timestamp(text);
    for (int k = digits; k < 3; ++k) ms *= 10;
  }
  std::string_view zone = text.substr(pos);
  if (!(zone.empty() || zone == "Z" || zone == "+00:00" || zone == "+0000"))
    bad_timestamp(text);

  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                     day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) bad_timestamp(text);
  auto days_since = sys_days{ymd}.time_since_epoch().count();
  return static_cast<TimeMs>(days_since) * kDayMs + h * kHourMs +
         mi * 60 * kSecondMs + s * kSecondMs + ms;
}

std::string format_iso8601(TimeMs t) {
  using namespace std::chrono;
  TimeMs day_index = t >= 0 ? t / kDayMs : -((-t + kDayMs - 1) / kDayMs);
  TimeMs rem = t - day_index * kDayMs;
  year_month_day ymd{sys_days{days{day_index}}};
  int h = static_cast<int>(rem / kHourMs);
  int mi = static_cast<int>((rem % kHourMs) / (60 * kSecondMs));
  int s = static_cast<int>((rem % (60 * kSecondMs)) / kSecondMs);
  int ms = static_cast<int>(rem % kSecondMs);
  char buf[40];
  if (ms == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ",
                  static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), h, mi, s);
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ",
                  static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), h, mi, s, ms);
  }
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericError("cannot format double");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty())
    throw ParseError("not a number: '" + std::string(text) + "'");
  return v;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cliffm
