#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace nsdesk::text {

std::string_view trim(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

// Whole-string numeric parses; throw ParseError naming `what` on failure.
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);

// Shortest representation that parses back to the identical double.
std::string format_double(double v);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace nsdesk::text
