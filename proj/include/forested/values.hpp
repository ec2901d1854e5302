#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace forested {

/// Strict decimal parse: optional sign, digits with optional fraction, optional exponent.
/// Surrounding whitespace is allowed; anything else fails.
std::optional<double> parse_decimal(std::string_view text);

/// Matches one of the recognised date layouts: YYYY-MM-DD, D/M/YYYY or M/D/YYYY.
bool looks_like_date(std::string_view text);

/// Shortest text that reads back to the same double ("3", "0.25", "1e+21").
std::string format_number(double value);

}  // namespace forested
