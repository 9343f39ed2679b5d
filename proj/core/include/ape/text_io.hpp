#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ape {

/// Malformed or unsupported file contents.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Parses a whole field as a double; throws std::invalid_argument naming
/// `what` on failure or trailing characters.
double parse_double(std::string_view text, std::string_view what);
long long parse_integer(std::string_view text, std::string_view what);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

}  // namespace ape
