#pragma once

// Small text helpers shared by the file formats.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace troublemaker {

// Shortest rendering that reads back to the same double.
std::string format_exact(double v);
// Fixed 6 fractional digits with trailing zeros trimmed ("1.5", "-0.25", "3").
std::string format_short(double v);

// Whole-string parse; nullopt on trailing garbage or empty input.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

}  // namespace troublemaker
