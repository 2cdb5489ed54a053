#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace finpred {

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Full-string parse; throws ParseError naming `field` otherwise.
double parse_double(std::string_view s, const std::string& field);

/// Shortest round-trippable form ("%.17g").
std::string format_double(double v);

}  // namespace finpred
