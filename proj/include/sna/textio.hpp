#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sna::textio {

/// Shortest-exact decimal form with 17 significant digits.
std::string format_double(double v);
/// C99 hex-float form (bit exact).
std::string format_hex(double v);

double parse_double(std::string_view text, std::size_t line);
long long parse_int(std::string_view text, std::size_t line);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string join_doubles(const std::vector<double>& values, char sep = ',', bool hex = false);
std::vector<double> parse_doubles(std::string_view text, std::size_t line, char sep = ',');

/// Line reader that tracks 1-based line numbers and strips trailing '\r'.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    std::optional<std::string> next();
    /// Next line, or ParseError("unexpected end of file") at the following line number.
    std::string expect(std::string_view what);
    /// Expects "key value" and returns value.
    std::string expect_key(std::string_view key);
    std::size_t line() const noexcept { return line_; }

private:
    std::istream& in_;
    std::size_t line_ = 0;
};

}  // namespace sna::textio
