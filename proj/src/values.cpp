#include "forested/values.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace forested {

namespace {
std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool all_digits(std::string_view s, std::size_t lo, std::size_t hi) {
  if (s.size() < lo || s.size() > hi) return false;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}
}  // namespace

std::optional<double> parse_decimal(std::string_view text) {
  std::string_view s = trim(text);
  if (s.empty()) return std::nullopt;
  std::size_t i = 0;
  if (s[i] == '+' || s[i] == '-') ++i;
  std::size_t int_digits = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++int_digits;
  std::size_t frac_digits = 0;
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++frac_digits;
  }
  if (int_digits + frac_digits == 0) return std::nullopt;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    std::size_t exp_digits = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++exp_digits;
    if (exp_digits == 0) return std::nullopt;
  }
  if (i != s.size()) return std::nullopt;
  // from_chars rejects a leading '+'.
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

bool looks_like_date(std::string_view text) {
  std::string_view s = trim(text);
  auto dash1 = s.find('-');
  if (dash1 == 4) {
    auto dash2 = s.find('-', 5);
    if (dash2 == std::string_view::npos) return false;
    return all_digits(s.substr(0, 4), 4, 4) && all_digits(s.substr(5, dash2 - 5), 2, 2) &&
           all_digits(s.substr(dash2 + 1), 2, 2);
  }
  auto slash1 = s.find('/');
  if (slash1 == std::string_view::npos) return false;
  auto slash2 = s.find('/', slash1 + 1);
  if (slash2 == std::string_view::npos) return false;
  return all_digits(s.substr(0, slash1), 1, 2) &&
         all_digits(s.substr(slash1 + 1, slash2 - slash1 - 1), 1, 2) &&
         all_digits(s.substr(slash2 + 1), 4, 4);
}

std::string format_number(double value) {
  if (value == std::floor(value) && std::fabs(value) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", value);
    return buf;
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

}  // namespace forested
