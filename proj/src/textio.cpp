#include "sna/textio.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "sna/errors.hpp"

namespace sna::textio {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

std::string format_hex(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    std::string body(buf, res.ptr);
    if (!std::isfinite(v)) return body;
    return body[0] == '-' ? "-0x" + body.substr(1) : "0x" + body;
}

double parse_double(std::string_view text, std::size_t line) {
    while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
    while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
    double v = 0.0;
    auto fmt = std::chars_format::general;
    bool negative = false;
    std::string_view body = text;
    if (body.size() > 1 && body[0] == '-') {
        negative = true;
        body.remove_prefix(1);
    }
    if (body.size() > 2 && body[0] == '0' && (body[1] == 'x' || body[1] == 'X')) {
        fmt = std::chars_format::hex;
        body.remove_prefix(2);
    } else {
        body = text;
        negative = false;
    }
    auto res = std::from_chars(body.data(), body.data() + body.size(), v, fmt);
    if (res.ec != std::errc() || res.ptr != body.data() + body.size())
        throw ParseError("invalid number '" + std::string(text) + "'", line);
    return negative ? -v : v;
}

long long parse_int(std::string_view text, std::size_t line) {
    while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
    while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
    long long v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw ParseError("invalid integer '" + std::string(text) + "'", line);
    return v;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(text.substr(start));
            return out;
        }
        out.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string join_doubles(const std::vector<double>& values, char sep, bool hex) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out.push_back(sep);
        out += hex ? format_hex(values[i]) : format_double(values[i]);
    }
    return out;
}

std::vector<double> parse_doubles(std::string_view text, std::size_t line, char sep) {
    std::vector<double> out;
    if (text.empty()) return out;
    for (auto field : split(text, sep)) out.push_back(parse_double(field, line));
    return out;
}

std::optional<std::string> LineReader::next() {
    std::string s;
    if (!std::getline(in_, s)) return std::nullopt;
    ++line_;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

std::string LineReader::expect(std::string_view what) {
    auto s = next();
    if (!s) throw ParseError("unexpected end of file, expected " + std::string(what), line_ + 1);
    return *s;
}

std::string LineReader::expect_key(std::string_view key) {
    std::string s = expect(key);
    if (s.size() < key.size() || s.compare(0, key.size(), key) != 0 ||
        (s.size() > key.size() && s[key.size()] != ' ')) {
        throw ParseError("expected '" + std::string(key) + "', got '" + s + "'", line_);
    }
    return s.size() > key.size() ? s.substr(key.size() + 1) : std::string();
}

}  // namespace sna::textio
