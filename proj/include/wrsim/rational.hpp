#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cctype>
#include <string>

#include "errors.hpp"

namespace wrsim {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

// Parses "12", "-0.75", "1.5e3" exactly.
inline Rational parse_decimal(const std::string& text) {
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    if (s.empty()) raise("ParseError", "empty number");
    size_t pos = 0;
    bool neg = false;
    if (s[pos] == '+' || s[pos] == '-') neg = s[pos++] == '-';
    BigInt num = 0;
    BigInt den = 1;
    bool digits = false;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
        num = num * 10 + (s[pos++] - '0');
        digits = true;
    }
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
            num = num * 10 + (s[pos++] - '0');
            den *= 10;
            digits = true;
        }
    }
    if (!digits) raise("ParseError", "not a number: " + text);
    long exp = 0;
    if (pos < s.size() && (s[pos] == 'e' || s[pos] == 'E')) {
        ++pos;
        size_t used = 0;
        try {
            exp = std::stol(s.substr(pos), &used);
        } catch (const std::exception&) {
            raise("ParseError", "bad exponent: " + text);
        }
        pos += used;
    }
    if (pos != s.size()) raise("ParseError", "trailing characters: " + text);
    for (; exp > 0; --exp) num *= 10;
    for (; exp < 0; ++exp) den *= 10;
    Rational r(num, den);
    return neg ? Rational(-r) : r;
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

inline std::string to_string(const Rational& r) {
    BigInt n = boost::multiprecision::numerator(r);
    BigInt d = boost::multiprecision::denominator(r);
    if (d == 1) return n.str();
    return n.str() + "/" + d.str();
}

}  // namespace wrsim
