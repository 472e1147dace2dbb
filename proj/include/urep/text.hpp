#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace urep {

std::string trim(std::string_view s);
std::string strip_comment(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
/// Replaces tabs and newlines so a message fits one report cell.
std::string one_line(std::string_view s);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);
std::string format_fixed(double v, int decimals);

std::int64_t parse_int(std::string_view s, std::string_view what);
double parse_double(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);
std::vector<int> parse_int_list(std::string_view s, std::string_view what);
std::vector<double> parse_double_list(std::string_view s, std::string_view what);

/// Ordered key=value pairs. '#' starts a comment; blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace urep
