#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace starlink {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

// Blank lines and '#' comments are skipped; keys and values are trimmed.
std::vector<KeyValue> parse_key_values(std::string_view text);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);
// Round-trip exact (%.17g); infinities as inf/-inf.
std::string format_double(double v);

}  // namespace starlink
